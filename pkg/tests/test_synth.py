import pytest

from frag.corpus import serialize_workflow
from frag.synth import ConfigError, CorpusConfig, corpus_stats, generate_corpus, preset, read_corpus, write_corpus


@pytest.fixture(scope="module")
def tiny():
    return generate_corpus(preset("tiny"))


def test_generation_is_deterministic(tiny):
    again = generate_corpus(preset("tiny"))
    for name in tiny.split_names():
        assert [serialize_workflow(d) for d in again.docs(name)] == [serialize_workflow(d) for d in tiny.docs(name)]
        assert again.catalog(name) == tiny.catalog(name)


def test_splits_and_sizes(tiny):
    cfg = preset("tiny")
    assert tiny.split_names() == ["train", "dev", "ood-hr", "ood-finance"]
    assert len(tiny.train) == cfg.n_train_flows and len(tiny.dev) == cfg.n_dev_flows
    assert len(tiny.docs("ood-finance")) == 8


def test_documents_resolve_in_their_catalog(tiny):
    for name in tiny.split_names():
        cat = tiny.catalog(name)
        for doc in tiny.docs(name):
            lo, hi = preset("tiny").steps_per_flow
            assert lo <= len(doc.steps) <= hi
            for step in doc.steps:
                assert cat.get("step", step.definition) is not None
                for table in step.tables():
                    assert cat.get("table", table) is not None
                for table, f in step.field_refs():
                    assert cat.get("field", f, table) is not None


def test_default_world_top20_share():
    # 40 scopes x 120 steps = 4,800 steps, 20 core steps
    cfg = CorpusConfig(seed=7, n_dev_flows=10, n_catalog_items=10)
    assert cfg.n_scopes * cfg.steps_per_scope == 4800
    stats = corpus_stats(generate_corpus(cfg))["splits"]["train"]
    assert stats["top20_share"] >= 0.40


def test_skew_grows_with_exponent():
    shares = [
        corpus_stats(generate_corpus(CorpusConfig(zipf_exponent=a, n_train_flows=300, n_dev_flows=10,
                                                  n_catalog_items=10)))["splits"]["train"]["top20_share"]
        for a in (0.6, 1.1, 1.6)
    ]
    assert shares[0] < shares[1] < shares[2]


def test_histogram_accounting(tiny):
    for stats in corpus_stats(tiny)["splits"].values():
        hist = stats["step_histogram"]
        assert sum(int(f) * n for f, n in hist.items()) == stats["step_occurrences"] == stats["samples"]["step"]


def test_empty_corpus_report_is_zero():
    from frag.synth import SplitSet

    stats = corpus_stats(SplitSet())["splits"]
    assert stats["train"]["flows"] == 0 and stats["train"]["step_occurrences"] == 0
    assert stats["dev"]["top20_share"] == 0.0 and stats["dev"]["step_histogram"] == {}


def test_ood_splits_hold_unseen_elements(tiny):
    train = tiny.catalog("train")
    for name in ("ood-hr", "ood-finance"):
        cat = tiny.catalog(name)
        assert any(e.key not in train for e in cat.of_kind("step"))
        assert any(e.key not in train for e in cat.of_kind("table"))


def test_annotations_reference_catalog_names(tiny):
    cat = tiny.catalog("dev")
    stems = {e.name.split("_")[0] for e in cat.of_kind("table")}
    for doc in tiny.dev:
        for step in doc.steps:
            if step.tables():
                assert step.tables()[0].split("_")[0] in stems


def test_write_read_round_trip(tmp_path, tiny):
    write_corpus(tiny, tmp_path, preset("tiny"))
    back = read_corpus(tmp_path)
    assert back.split_names() == tiny.split_names()
    for name in tiny.split_names():
        assert back.docs(name) == tiny.docs(name)
        assert back.catalog(name) == tiny.catalog(name)


@pytest.mark.parametrize("overrides", [
    {"types_per_stem": 11},
    {"n_tables": 641},
    {"steps_per_flow": (0, 3)},
    {"zipf_exponent": -1.0},
])
def test_config_validation(overrides):
    with pytest.raises(ConfigError):
        CorpusConfig(**overrides)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("huge")
