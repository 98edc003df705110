from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frag.corpus import Element, ElementCatalog
from frag.dataset import (
    DownsamplePolicy,
    ExhaustedError,
    InstructionPair,
    MissingElementError,
    attach_negatives,
    build_dataset,
    downsample,
    extract_positive_pairs,
    mine_hard_negative,
    mine_random_negative,
    read_dataset,
    write_dataset,
)
from frag.synth import generate_corpus, preset
from frag.templates import TaskId


@pytest.fixture(scope="module")
def tiny():
    return generate_corpus(preset("tiny"))


@pytest.fixture(scope="module")
def sample_catalog():
    return ElementCatalog([
        Element("step", "look_up_records", scope="global"),
        Element("step", "update_record", scope="global"),
        Element("step", "send_email", scope="global"),
        Element("table", "incident_task", scope="global"),
        Element("table", "incident", scope="global"),
        Element("field", "assigned_to", parent="incident_task"),
        Element("field", "active", parent="incident_task"),
        Element("field", "state", parent="incident_task"),
    ])


def test_positive_pairs_from_sample(sample_doc, sample_catalog):
    pairs = extract_positive_pairs(sample_doc, sample_catalog, ("T01", "T04", "T07", "T09"), doc_id="d1")
    by_template = Counter(p.template_id for p in pairs)
    # T01 targets every step of the flow; T04 and T07 one pair per step; T09 one per referenced field
    assert by_template == {"T01": 2, "T04": 2, "T07": 2, "T09": 2}
    assert {p.target for p in pairs if p.template_id == "T09"} == {
        ("field", "assigned_to", "incident_task"), ("field", "active", "incident_task")}
    assert all(p.is_positive and p.provenance["doc"] == "d1" for p in pairs)


def test_missing_targets_are_counted_or_raise(sample_doc):
    cat = ElementCatalog([Element("step", "look_up_records", scope="global")])
    report = Counter()
    pairs = extract_positive_pairs(sample_doc, cat, ("T04",), report=report)
    assert len(pairs) == 1 and report["missing_step"] == 1
    with pytest.raises(MissingElementError):
        extract_positive_pairs(sample_doc, cat, ("T04",), strict=True)


def test_pair_validation_and_json():
    p = InstructionPair(TaskId.step_from_annotation, "T04", "x", ("step", "a", ""))
    assert InstructionPair.from_json(p.to_json()) == p
    with pytest.raises(ValueError):
        InstructionPair(TaskId.step_from_annotation, "T04", "x", ("step", "a", ""), negative_kind="hard")
    with pytest.raises(ValueError):
        InstructionPair(TaskId.step_from_annotation, "T04", "x", ("step", "a", ""), label="negative")


def test_negatives_never_gold(sample_catalog):
    rng = np.random.default_rng(0)
    p = InstructionPair(TaskId.step_from_annotation, "T04", "x", ("step", "look_up_records", ""))
    gold = {("step", "look_up_records", ""), ("step", "update_record", "")}
    for _ in range(50):
        assert mine_random_negative(p, sample_catalog, rng, gold).target == ("step", "send_email", "")
        hard = mine_hard_negative(p, sample_catalog, rng, gold)
        assert hard.target == ("step", "send_email", "") and hard.negative_kind == "hard"
    with pytest.raises(ExhaustedError):
        mine_random_negative(p, sample_catalog, rng, gold | {("step", "send_email", "")})


def test_hard_negative_fields_share_table(sample_catalog):
    rng = np.random.default_rng(1)
    p = InstructionPair(TaskId.field_from_text, "T09", "x", ("field", "state", "incident_task"))
    for _ in range(20):
        n = mine_hard_negative(p, sample_catalog, rng)
        assert n.target[2] == "incident_task" and n.target != p.target


def test_attach_negatives_excludes_all_gold_of_the_instruction(tiny):
    cat = tiny.catalog("train")
    positives = []
    for i, doc in enumerate(tiny.train[:10]):
        positives.extend(extract_positive_pairs(doc, cat, ("T01",), doc_id=str(i)))
    gold = {}
    for p in positives:
        gold.setdefault(p.instruction, set()).add(p.target)
    out = attach_negatives(positives, cat, np.random.default_rng(0))
    assert len(out) == 3 * len(positives)
    for p in out:
        if not p.is_positive:
            assert p.target not in gold[p.instruction]


def test_downsample_factor_anchors():
    policy = DownsamplePolicy()
    assert policy.factor(50) == 4
    assert policy.factor(500) == 16
    assert policy.factor(5) == 1 and policy.factor(1) == 1
    assert policy.factor(10**9) == 64


@given(st.floats(1, 1e7), st.floats(1, 1e7))
def test_downsample_factor_monotone(a, b):
    policy = DownsamplePolicy()
    lo, hi = sorted((a, b))
    assert 1 <= policy.factor(lo) <= policy.factor(hi) <= 64


# a 3-sigma bound fails for about 0.3% of seeds, so the seeds are drawn derandomized
@given(st.integers(0, 2**32))
@settings(max_examples=20, deadline=None, derandomize=True, database=None)
def test_downsampled_counts_within_binomial_bounds(seed):
    pairs = []
    for name, freq in (("common", 500), ("mid", 50), ("rare", 3)):
        for i in range(freq):
            pos = InstructionPair(TaskId.step_from_annotation, "T04", f"{name}{i}", ("step", name, ""))
            pairs.append(pos)
            pairs.append(InstructionPair(pos.task, "T04", pos.instruction, ("step", "other", ""),
                                         label="negative", negative_kind="random"))
    kept = downsample(pairs, DownsamplePolicy(), np.random.default_rng(seed))
    counts = Counter(p.target[1] for p in kept if p.is_positive)
    for name, n, factor in (("common", 500, 16), ("mid", 50, 4)):
        mean, sd = n / factor, (n * (1 / factor) * (1 - 1 / factor)) ** 0.5
        assert abs(counts[name] - mean) <= 3 * sd
    assert counts["rare"] == 3
    # each kept positive keeps its negative
    for a, b in zip(kept[::2], kept[1::2]):
        assert a.is_positive and not b.is_positive and a.instruction == b.instruction


def test_build_dataset_deterministic_and_persisted(tmp_path, tiny):
    a = build_dataset(tiny, policy=DownsamplePolicy())
    b = build_dataset(tiny, policy=DownsamplePolicy())
    assert [p.to_json() for p in a.train] == [p.to_json() for p in b.train]
    assert set(a.eval) == {"dev", "ood-hr", "ood-finance"}
    assert all(p.is_positive for pairs in a.eval.values() for p in pairs)
    assert a.report["positives"] <= a.report["positives_before_downsampling"]
    write_dataset(a, tmp_path)
    back = read_dataset(tmp_path)
    assert back.train == a.train and back.eval == a.eval and back.report == a.report


def test_task_group_filter(tiny):
    build = build_dataset(tiny, task_groups=["table"])
    assert {p.task for p in build.train} <= {TaskId.table_from_context, TaskId.table_from_text}


def test_corpus_frequencies_count_references(sample_doc):
    from frag.dataset import corpus_frequencies

    freq = corpus_frequencies([sample_doc, sample_doc])
    assert freq[("step", "look_up_records", "")] == 2
    assert freq[("table", "incident_task", "")] == 4
    assert freq[("field", "assigned_to", "incident_task")] == 2


def test_downsample_uses_supplied_corpus_frequencies():
    # 500 pairs of one element, but the corpus saw it only 5 times: nothing is dropped
    pairs = [InstructionPair(TaskId.step_from_annotation, "T04", f"q{i}", ("step", "s", "")) for i in range(500)]
    kept = downsample(pairs, DownsamplePolicy(), np.random.default_rng(0), Counter({("step", "s", ""): 5}))
    assert kept == pairs
    assert len(downsample(pairs, DownsamplePolicy(), np.random.default_rng(0))) < 100
