"""Seeded synthetic workflow corpus with Zipf-skewed step usage.

Element names and descriptions use canonical vocabulary ("look_up",
"case", "_date") while annotations and requirements use paraphrases
("fetch", "tickets", "day"). Lexical matching therefore only gets part of
the way, and the paraphrase map is shared by every domain, so it can be
learned on one domain and reused on held-out ones.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from frag.corpus import (
    Element,
    ElementCatalog,
    InputBinding,
    StepInstance,
    TriggerSpec,
    WorkflowDoc,
    catalog_from_corpus,
    parse_workflow,
    read_jsonl,
    serialize_workflow,
    write_jsonl,
)
from frag.rng import stream


class ConfigError(ValueError):
    pass


# canonical verb -> paraphrases used in annotations and requirements
VERBS = {
    # generic record operations, only used by the core steps
    "look_up": ["find", "search for", "fetch", "query", "retrieve"],
    "create": ["add a new", "open a new", "insert a", "make a", "register a"],
    "update": ["modify", "change", "edit", "revise", "amend"],
    "delete": ["remove", "erase", "purge", "discard", "wipe"],
    "assign": ["allocate", "hand over", "route", "give out", "dispatch"],
    "approve": ["sign off on", "authorize", "accept", "greenlight", "endorse"],
    "notify": ["alert", "inform about", "ping about", "warn about", "tell about"],
    "copy": ["duplicate", "clone", "replicate", "mirror", "reproduce"],
    "attach": ["link", "append to", "connect", "bind", "pin"],
    # scope-specific actions
    "close": ["resolve", "finish", "complete", "wrap up", "settle"],
    "export": ["download", "extract", "dump", "save out", "pull out"],
    "escalate": ["raise", "prioritize", "bump up", "push up", "elevate"],
    "archive": ["shelve", "store away", "retire", "put in storage", "mothball"],
    "sync": ["synchronize", "reconcile", "align", "keep in step", "harmonize"],
    "publish": ["release", "announce", "broadcast", "share out", "put out"],
    "schedule": ["plan", "book a slot for", "calendar", "set a time for", "line up"],
    "validate": ["verify", "check", "confirm", "audit", "vet"],
    "merge": ["combine", "fold together", "consolidate", "unify", "join"],
    "transfer": ["move", "shift", "relocate", "hand off", "migrate"],
    "reopen": ["revive", "restart", "resume", "unclose", "reactivate"],
    "classify": ["categorize", "tag", "label", "sort", "group"],
}
SPECIFIC_VERBS = ("close", "export", "escalate", "archive", "sync", "publish", "schedule", "validate", "merge",
                  "transfer", "reopen", "classify")
# families whose steps usually carry a condition
CONDITIONED = frozenset({"look_up", "update", "delete", "notify", "if", "wait", "foreach", "close", "export",
                         "escalate", "archive", "validate", "merge", "transfer"})

# canonical table type -> plural paraphrases
TABLE_TYPES = {
    "task": ["chores", "jobs", "todos", "work items"],
    "case": ["tickets", "issues", "complaints", "matters"],
    "request": ["asks", "petitions", "demands", "applications"],
    "record": ["entries", "rows", "data items", "documents"],
    "event": ["occurrences", "happenings", "episodes", "moments"],
    "order": ["purchases", "bookings", "procurements", "buys"],
    "asset": ["devices", "equipment", "hardware", "possessions"],
    "contract": ["agreements", "deals", "covenants", "pacts"],
    "message": ["notes", "posts", "memos", "texts"],
    "user": ["people", "persons", "members", "staff"],
}

SINGULAR = {
    "task": "chore", "case": "ticket", "request": "ask", "record": "entry", "event": "occurrence",
    "order": "purchase", "asset": "device", "contract": "agreement", "message": "note", "user": "person",
}

# canonical field suffix -> paraphrases
FIELD_SUFFIXES = {
    "date": ["day", "calendar day", "moment in time"],
    "by": ["person", "actor", "who did it"],
    "count": ["number", "tally", "total"],
    "state": ["status", "stage", "condition"],
    "to": ["recipient", "target", "destination"],
    "note": ["comment", "remark", "text"],
    "id": ["identifier", "key", "code"],
    "flag": ["indicator", "switch", "toggle"],
}

# generic high-frequency steps: name, phrase family, references a table
CORE_STEPS = [
    ("look_up_records", "look_up", True, "Look up records in a table that match conditions"),
    ("update_record", "update", True, "Update a record with new field values"),
    ("FOREACH", "foreach", True, "Repeat the following steps for each item in a list"),
    ("create_record", "create", True, "Create a record in a table"),
    ("IF", "if", True, "Run the following steps only when a condition holds"),
    ("look_up_record", "look_up", True, "Look up a single record"),
    ("send_email", "email", True, "Send an email"),
    ("delete_record", "delete", True, "Delete a record from a table"),
    ("ELSE", "else", False, "Run the following steps when the previous condition fails"),
    ("ask_for_approval", "approve", True, "Ask for approval on a record"),
    ("send_notification", "notify", True, "Send a notification"),
    ("log", "log", False, "Write a log message"),
    ("update_multiple_records", "update", True, "Update multiple records at once"),
    ("WAITFORCONDITION", "wait", True, "Wait until a condition is met on a record"),
    ("create_task", "create", True, "Create a task record"),
    ("set_flow_variables", "setvar", False, "Set flow variables"),
    ("get_attachments_on_record", "attach", True, "Get attachments on a record"),
    ("copy_attachment", "copy", True, "Copy an attachment to another record"),
    ("make_a_decision", "decide", False, "Choose a branch based on decision rules"),
    ("assign_subflow", "assign", True, "Assign a record to a group"),
]

CONTROL_PHRASES = {
    "foreach": ["for each", "for every", "loop over", "iterate through"],
    "if": ["if", "when", "in case"],
    "else": ["otherwise handle the rest", "else do nothing more", "if not then stop"],
    "wait": ["wait until", "pause until", "hold until"],
    "email": ["email the owners of", "send a mail about", "write to the owners of"],
    "log": ["write a log line", "record a log entry", "note the outcome in the log"],
    "setvar": ["store the flow values", "remember the computed values", "keep the intermediate values"],
    "decide": ["pick a branch", "choose the path", "decide what comes next"],
}

TRIGGERS = {
    "daily": ["Every day", "Each day", "Once a day"],
    "weekly": ["Every week", "Each week", "Once a week"],
    "hourly": ["Every hour", "Each hour", "Once an hour"],
    "record_created": ["When a new {t} arrives", "Whenever a {t} shows up", "As soon as a {t} is added"],
    "record_updated": ["When a {t} changes", "Whenever a {t} is modified", "As soon as a {t} is edited"],
}

PRODUCTS = {
    "laptop": ["portable computer", "notebook machine", "mobile workstation"],
    "phone": ["mobile handset", "cell device", "smart handheld"],
    "monitor": ["display screen", "external panel", "desk display"],
    "headset": ["audio set", "earphones with mic", "call headphones"],
    "keyboard": ["typing board", "key input device", "typing pad"],
    "license": ["software entitlement", "usage permit", "seat allowance"],
    "chair": ["office seat", "desk seat", "ergonomic seat"],
    "badge": ["access card", "entry pass", "id card"],
}

_ONSETS = ["b", "br", "d", "dr", "f", "g", "gl", "k", "kr", "l", "m", "n", "p", "pl", "r", "s", "st", "t", "tr", "v", "z"]
_VOWELS = ["a", "e", "i", "o", "u"]
_CODAS = ["", "n", "r", "l", "s", "x", "m"]


@dataclass(frozen=True)
class OodDomain:
    name: str
    n_flows: int
    scope_overlap: float


@dataclass(frozen=True)
class CorpusConfig:
    seed: int = 7
    n_scopes: int = 40
    steps_per_scope: int = 120
    n_core_steps: int = 20
    zipf_exponent: float = 1.1
    n_tables: int = 640
    types_per_stem: int = 8
    fields_per_table: tuple[int, int] = (8, 12)
    n_field_stems: int = 80
    n_train_flows: int = 1500
    n_dev_flows: int = 280
    ood_domains: tuple[OodDomain, ...] = ()
    n_heldout_scopes: int = 12
    scopes_per_domain: int = 4
    steps_per_flow: tuple[int, int] = (2, 8)
    n_catalog_items: int = 2000
    annotation_grammar_version: str = "g1"

    def __post_init__(self):
        if self.n_core_steps > self.n_scopes * self.steps_per_scope:
            raise ConfigError("n_core_steps exceeds the number of steps")
        if self.n_scopes < 2 or self.n_heldout_scopes >= self.n_scopes:
            raise ConfigError("need at least one training scope besides the held-out ones")
        if not 1 <= self.types_per_stem <= len(TABLE_TYPES):
            raise ConfigError(f"types_per_stem must lie in [1, {len(TABLE_TYPES)}]")
        if self.n_tables % self.n_scopes or (self.n_tables // self.n_scopes) % self.types_per_stem:
            raise ConfigError("n_tables must give each scope a multiple of types_per_stem tables")
        tables_per_scope = self.n_tables // self.n_scopes
        if self.steps_per_scope > len(SPECIFIC_VERBS) * tables_per_scope:
            raise ConfigError("steps_per_scope exceeds verbs x tables per scope")
        if self.n_core_steps > len(CORE_STEPS) + self.steps_per_scope:
            raise ConfigError("n_core_steps exceeds the global scope")
        lo, hi = self.steps_per_flow
        if not 1 <= lo <= hi:
            raise ConfigError("steps_per_flow must satisfy 1 <= lo <= hi")
        flo, fhi = self.fields_per_table
        if not 1 <= flo <= fhi <= 3 * len(FIELD_SUFFIXES):
            raise ConfigError("fields_per_table out of range")
        if self.zipf_exponent < 0:
            raise ConfigError("zipf_exponent must be non-negative")
        for d in self.ood_domains:
            if not 0.0 <= d.scope_overlap <= 1.0:
                raise ConfigError(f"scope overlap for {d.name!r} must lie in [0, 1]")
            if d.n_flows < 0:
                raise ConfigError("n_flows must be non-negative")
            if round(self.scopes_per_domain * (1 - d.scope_overlap)) > self.n_heldout_scopes:
                raise ConfigError(f"domain {d.name!r} needs more held-out scopes than exist")

    def to_json(self) -> dict:
        out = asdict(self)
        out["fields_per_table"] = list(self.fields_per_table)
        out["steps_per_flow"] = list(self.steps_per_flow)
        out["ood_domains"] = [[d.name, d.n_flows, d.scope_overlap] for d in self.ood_domains]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusConfig":
        obj = dict(obj)
        if "ood_domains" in obj:
            obj["ood_domains"] = tuple(
                OodDomain(*d) if isinstance(d, (list, tuple)) else OodDomain(**d) for d in obj["ood_domains"]
            )
        for key in ("fields_per_table", "steps_per_flow"):
            if key in obj:
                obj[key] = tuple(obj[key])
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


# flows per OOD split, as in the evaluation deployments the method was tested on
OOD_FLOW_COUNTS = (103, 100, 100, 100, 100, 100, 98, 100, 100, 171)


def preset(name: str) -> CorpusConfig:
    """Named corpus configurations: ``paper``, ``acceptance`` and ``tiny``."""
    ood = tuple(OodDomain(f"ood{i + 1}", n, 0.25) for i, n in enumerate(OOD_FLOW_COUNTS))
    if name == "paper":
        return CorpusConfig(n_train_flows=3000, n_dev_flows=280, ood_domains=ood, n_catalog_items=20000)
    if name == "acceptance":
        return CorpusConfig(n_train_flows=800, n_dev_flows=200, ood_domains=ood, n_catalog_items=1500)
    if name == "tiny":
        return CorpusConfig(
            seed=7, n_scopes=6, steps_per_scope=24, n_core_steps=8, n_tables=24, types_per_stem=4, n_field_stems=12,
            n_train_flows=40, n_dev_flows=10, n_heldout_scopes=2, scopes_per_domain=2,
            ood_domains=(OodDomain("hr", 10, 0.5), OodDomain("finance", 8, 0.0)), n_catalog_items=30,
        )
    raise ConfigError(f"unknown preset {name!r}")


@dataclass
class SplitSet:
    train: list[WorkflowDoc] = field(default_factory=list)
    dev: list[WorkflowDoc] = field(default_factory=list)
    ood: dict[str, list[WorkflowDoc]] = field(default_factory=dict)
    catalogs: dict[str, ElementCatalog] = field(default_factory=dict)
    extracts: dict[str, list[dict]] = field(default_factory=dict)

    def split_names(self) -> list[str]:
        return ["train", "dev", *(f"ood-{name}" for name in self.ood)]

    def docs(self, split: str) -> list[WorkflowDoc]:
        if split == "train":
            return self.train
        if split == "dev":
            return self.dev
        if split.startswith("ood-"):
            return self.ood[split[4:]]
        raise KeyError(split)

    def doc_ids(self, split: str) -> list[str]:
        return [f"{split}/{i:05d}" for i in range(len(self.docs(split)))]

    def catalog(self, split: str) -> ElementCatalog:
        return self.catalogs.get(split, ElementCatalog())


# -- world construction --------------------------------------------------------


def _pseudo_words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < n:
        syllables = rng.integers(2, 4)
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syllables))
        w += _CODAS[rng.integers(len(_CODAS))]
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


@dataclass
class _Table:
    name: str
    stem: str
    type: str
    scope: str
    fields: list[tuple[str, str, str]]  # (field name, field stem, suffix)


@dataclass
class _Step:
    name: str
    scope: str
    family: str
    table: _Table | None
    description: str
    core: bool = False


@dataclass
class _World:
    scopes: list[str]
    tables: dict[str, list[_Table]]
    steps: dict[str, list[_Step]]
    core: list[_Step]
    field_stems: list[str]


def _build_world(cfg: CorpusConfig) -> _World:
    rng = stream(cfg.seed, "world")
    taken = set(VERBS) | set(TABLE_TYPES) | set(FIELD_SUFFIXES)
    scope_words = _pseudo_words(rng, cfg.n_scopes - 1, taken)
    scopes = ["global"] + [f"sn_{w}" for w in scope_words]
    field_stems = _pseudo_words(rng, cfg.n_field_stems, taken)
    tables_per_scope = cfg.n_tables // cfg.n_scopes
    type_names = list(TABLE_TYPES)
    suffix_names = list(FIELD_SUFFIXES)
    flo, fhi = cfg.fields_per_table

    tables: dict[str, list[_Table]] = {}
    for scope in scopes:
        stems = _pseudo_words(rng, tables_per_scope // cfg.types_per_stem, taken)
        scope_tables = []
        for stem in stems:
            for t in sorted(rng.choice(len(type_names), size=cfg.types_per_stem, replace=False)):
                n_fields = int(rng.integers(flo, fhi + 1))
                n_stems = math.ceil(n_fields / 4)
                fstems = [field_stems[i] for i in rng.choice(len(field_stems), size=n_stems, replace=False)]
                grid = [(f, s) for f in fstems for s in (suffix_names[i] for i in rng.permutation(len(suffix_names))[:4])]
                fields = [(f"{f}_{s}", f, s) for f, s in grid[:n_fields]]
                scope_tables.append(_Table(f"{stem}_{type_names[t]}", stem, type_names[t], scope, fields))
        tables[scope] = scope_tables

    steps: dict[str, list[_Step]] = {}
    core: list[_Step] = []
    verbs = list(SPECIFIC_VERBS)
    for scope in scopes:
        grid = [(v, t) for t in tables[scope] for v in verbs]
        order = rng.permutation(len(grid))
        scope_steps: list[_Step] = []
        if scope == "global":
            for name, family, _, desc in CORE_STEPS[: min(cfg.n_core_steps, len(CORE_STEPS))]:
                step = _Step(name, scope, family, None, desc, core=True)
                scope_steps.append(step)
                core.append(step)
        for i in order:
            if len(scope_steps) >= cfg.steps_per_scope:
                break
            verb, table = grid[i]
            desc = f"{verb.replace('_', ' ').capitalize()} {table.stem} {table.type} records"
            scope_steps.append(_Step(f"{verb}_{table.name}", scope, verb, table, desc))
        steps[scope] = scope_steps
    # core steps beyond the generic list are the first regular global steps
    extra = cfg.n_core_steps - len(core)
    for step in steps["global"][len(core) : len(core) + max(0, extra)]:
        step.core = True
        core.append(step)
    return _World(scopes, tables, steps, core, field_stems)


def _catalog_rows(world: _World, scopes: list[str]) -> list[dict]:
    rows = []
    for scope in scopes:
        for step in world.steps[scope]:
            rows.append({"kind": "step", "name": step.name, "scope": scope, "description": step.description})
        for t in world.tables[scope]:
            rows.append({"kind": "table", "name": t.name, "scope": scope,
                         "description": f"Stores {t.stem} {t.type} records"})
            for fname, fstem, suffix in t.fields:
                rows.append({"kind": "field", "name": fname, "parent": t.name,
                             "description": f"{fstem.capitalize()} {suffix} of the {t.stem} {t.type}"})
    return rows


def _catalog_items(cfg: CorpusConfig, taken: set[str]) -> list[dict]:
    rng = stream(cfg.seed, "catalog-items")
    brands = _pseudo_words(rng, max(1, cfg.n_catalog_items // 20 + 1), taken)
    products = list(PRODUCTS)
    adjectives = ["compact", "standard", "premium", "basic", "rugged", "lightweight", "wide", "silent"]
    rows, seen = [], set()
    while len(rows) < cfg.n_catalog_items:
        brand = brands[rng.integers(len(brands))]
        product = products[rng.integers(len(products))]
        model = int(rng.integers(1, 100))
        name = f"{brand}_{product}_{model}"
        if name in seen:
            continue
        seen.add(name)
        para = PRODUCTS[product][rng.integers(len(PRODUCTS[product]))]
        adj = adjectives[rng.integers(len(adjectives))]
        rows.append({"kind": "catalog_item", "name": name,
                     "description": f"A {adj} {brand} {para}, model {model}"})
    return rows


# -- flow generation -----------------------------------------------------------


def _pick(rng: np.random.Generator, options: list[str], avoid: str | None = None) -> str:
    if avoid is not None and len(options) > 1:
        options = [o for o in options if o != avoid]
    return options[int(rng.integers(len(options)))]


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** exponent
    return w / w.sum()


class _FlowMaker:
    def __init__(self, cfg: CorpusConfig, world: _World, scopes: list[str], rng: np.random.Generator):
        self.cfg = cfg
        self.world = world
        self.rng = rng
        self.scope_tables = {s: world.tables[s] for s in scopes}
        pool_core = [s for s in world.core if s.scope in scopes]
        others = [s for scope in scopes for s in world.steps[scope] if not s.core]
        others = [others[i] for i in rng.permutation(len(others))]
        self.ranked = pool_core + others
        self.weights = zipf_weights(len(self.ranked), cfg.zipf_exponent)

    def _condition(self, table: _Table, phrase_style: str | None = None):
        rng = self.rng
        n = 1 if rng.random() < 0.7 or len(table.fields) < 2 else 2
        picks = [table.fields[i] for i in rng.choice(len(table.fields), size=n, replace=False)]
        clauses, phrases = [], []
        for fname, fstem, suffix in picks:
            para = _pick(rng, FIELD_SUFFIXES[suffix])
            kind = int(rng.integers(3))
            if kind == 0:
                clauses.append(f"{fname}ISEMPTY")
                phrases.append(f"the {fstem} {para} is empty")
            elif kind == 1:
                clauses.append(f"{fname}ISNOTEMPTY")
                phrases.append(f"the {fstem} {para} is set")
            else:
                value = str(int(rng.integers(1, 10)))
                clauses.append(f"{fname}={value}")
                phrases.append(f"the {fstem} {para} equals {value}")
        return "^".join(clauses), " and ".join(phrases)

    def _step(self, step: _Step, flow_scope: str):
        """Return (StepInstance, requirement clause, table used)."""
        rng = self.rng
        table = step.table
        if table is None and step.core and dict((n, t) for n, _, t, _ in CORE_STEPS).get(step.name, False):
            candidates = self.scope_tables[flow_scope]
            table = candidates[int(rng.integers(len(candidates)))]
        family = step.family
        inputs: list[InputBinding] = []
        if table is not None:
            tpara = _pick(rng, TABLE_TYPES[table.type])
            tpara_req = _pick(rng, TABLE_TYPES[table.type], avoid=tpara)
            noun, noun_req = f"{table.stem} {tpara}", f"{table.stem} {tpara_req}"
            inputs.append(InputBinding(name="table", value=table.name, table=table.name))
        else:
            noun = noun_req = ""
        if family in VERBS:
            verb = _pick(rng, VERBS[family])
            verb_req = _pick(rng, VERBS[family], avoid=verb)
            annotation, clause = f"{verb} {noun}", f"{verb_req} {noun_req}"
        elif family in ("if", "wait"):
            annotation = clause = ""
        else:
            lead = _pick(rng, CONTROL_PHRASES[family])
            lead_req = _pick(rng, CONTROL_PHRASES[family], avoid=lead)
            annotation, clause = f"{lead} {noun}".strip(), f"{lead_req} {noun_req}".strip()
        if table is not None and (family in CONDITIONED or rng.random() < 0.3):
            condition, phrase = self._condition(table)
            inputs.append(InputBinding(name="conditions", value=condition, condition=condition))
            if family in ("if", "wait"):
                lead = _pick(rng, CONTROL_PHRASES[family])
                annotation = f"{lead} {phrase} on the {noun}"
                clause = f"{_pick(rng, CONTROL_PHRASES[family], avoid=lead)} the {noun_req} qualifies"
            else:
                annotation += f" where {phrase}"
        annotation = annotation.strip()
        return StepInstance(annotation, step.name, step.scope, tuple(inputs)), clause.strip(), table

    def flow(self) -> WorkflowDoc:
        rng = self.rng
        lo, hi = self.cfg.steps_per_flow
        n = int(rng.integers(lo, hi + 1))
        chosen = [self.ranked[i] for i in rng.choice(len(self.ranked), size=n, p=self.weights)]
        flow_scope = next((s.scope for s in chosen if not s.core), "global")
        instances, clauses = [], []
        for step in chosen:
            inst, clause, _ = self._step(step, flow_scope)
            instances.append(inst)
            if clause:
                clauses.append(clause)
        ttype = list(TRIGGERS)[int(rng.integers(len(TRIGGERS)))]
        if ttype.startswith("record_"):
            tables = self.scope_tables[flow_scope]
            t = tables[int(rng.integers(len(tables)))]
            noun = f"{t.stem} {SINGULAR[t.type]}"
            lead = _pick(rng, TRIGGERS[ttype]).format(t=noun)
            trigger = TriggerSpec(lead.lower(), ttype, (InputBinding(name="table", value=t.name, table=t.name),))
        else:
            lead = _pick(rng, TRIGGERS[ttype])
            value = {"daily": "1970-01-02 00:00:00", "weekly": "1970-01-05 09:00:00", "hourly": "00:00"}[ttype]
            trigger = TriggerSpec(lead.lower(), ttype, (InputBinding(name="time", value=value),))
        if len(clauses) > 1:
            body = ", ".join(clauses[:-1]) + " and " + clauses[-1]
        else:
            body = clauses[0] if clauses else "run the flow"
        requirement = f"{lead}, {body}."
        return WorkflowDoc(requirement=requirement, doc_type="flow", scope=flow_scope,
                           trigger=trigger, steps=tuple(instances))


def generate_corpus(config: CorpusConfig) -> SplitSet:
    """Build train/dev/OOD splits and their catalogs; a pure function of ``config``."""
    world = _build_world(config)
    n_train_scopes = config.n_scopes - config.n_heldout_scopes
    train_scopes = world.scopes[:n_train_scopes]
    heldout = world.scopes[n_train_scopes:]

    out = SplitSet()
    taken = set(VERBS) | set(TABLE_TYPES) | set(FIELD_SUFFIXES) | set(world.scopes)
    items = _catalog_items(config, taken)
    train_rows = _catalog_rows(world, train_scopes)
    train_catalog = ElementCatalog(Element.from_json(r) for r in train_rows + items)

    maker = _FlowMaker(config, world, train_scopes, stream(config.seed, "flows", "train"))
    out.train = [maker.flow() for _ in range(config.n_train_flows)]
    dev_maker = _FlowMaker(config, world, train_scopes, stream(config.seed, "flows", "dev"))
    out.dev = [dev_maker.flow() for _ in range(config.n_dev_flows)]
    out.catalogs["train"] = train_catalog
    out.extracts["train"] = train_rows + items
    dev_rows = train_rows
    out.catalogs["dev"] = ElementCatalog(Element.from_json(r) for r in dev_rows)
    out.extracts["dev"] = dev_rows

    for domain in config.ood_domains:
        rng = stream(config.seed, "ood-scopes", domain.name)
        n_shared = round(config.scopes_per_domain * domain.scope_overlap)
        n_new = config.scopes_per_domain - n_shared
        shared = [train_scopes[1:][i] for i in rng.choice(len(train_scopes) - 1, size=n_shared, replace=False)]
        new = [heldout[i] for i in rng.choice(len(heldout), size=n_new, replace=False)]
        scopes = ["global", *shared, *new]
        dmaker = _FlowMaker(config, world, scopes, stream(config.seed, "flows", "ood", domain.name))
        out.ood[domain.name] = [dmaker.flow() for _ in range(domain.n_flows)]
        rows = _catalog_rows(world, scopes)
        out.catalogs[f"ood-{domain.name}"] = ElementCatalog(Element.from_json(r) for r in rows)
        out.extracts[f"ood-{domain.name}"] = rows
    return out


# -- statistics & persistence ----------------------------------------------------


def step_frequencies(docs: list[WorkflowDoc]) -> Counter:
    return Counter(step.definition for doc in docs for step in doc.steps)


def top_share(freqs: Counter, k: int = 20) -> float:
    total = sum(freqs.values())
    return sum(c for _, c in freqs.most_common(k)) / total if total else 0.0


def corpus_stats(split: SplitSet) -> dict:
    """Flow counts, catalog sizes, per-kind reference counts and step histograms."""
    report: dict = {"splits": {}}
    for name in split.split_names():
        docs = split.docs(name)
        freqs = step_frequencies(docs)
        hist = Counter(freqs.values())
        catalog = split.catalog(name)
        report["splits"][name] = {
            "flows": len(docs),
            "unique_elements": {kind: len(catalog.of_kind(kind)) for kind in ("step", "table", "field", "catalog_item")},
            "samples": {
                "step": sum(len(d.steps) for d in docs),
                "table": sum(len(s.tables()) for d in docs for s in d.steps),
                "field": sum(len(s.field_refs()) for d in docs for s in d.steps),
            },
            "distinct_steps_used": len(freqs),
            "step_occurrences": sum(freqs.values()),
            "step_histogram": {str(k): hist[k] for k in sorted(hist)},
            "top20_share": top_share(freqs),
        }
    return report


def write_corpus(split: SplitSet, root: str | Path, config: CorpusConfig | None = None) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if config is not None:
        (root / "config.json").write_text(json.dumps(config.to_json(), indent=2, sort_keys=True) + "\n")
    for name in split.split_names():
        flows = root / name / "flows"
        flows.mkdir(parents=True, exist_ok=True)
        for i, doc in enumerate(split.docs(name)):
            (flows / f"{i:05d}.yaml").write_text(serialize_workflow(doc), encoding="utf-8")
        split.catalog(name).save(root / name / "catalog.jsonl")
        write_jsonl(root / name / "extracts.jsonl", split.extracts.get(name, []))


def read_corpus(root: str | Path) -> SplitSet:
    root = Path(root)
    out = SplitSet()
    order: dict[str, int] = {}
    if (root / "config.json").exists():
        cfg = CorpusConfig.from_json(json.loads((root / "config.json").read_text()))
        order = {f"ood-{d.name}": i for i, d in enumerate(cfg.ood_domains)}
    subs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: (order.get(p.name, len(order)), p.name))
    for sub in subs:
        docs = [parse_workflow(f.read_text(encoding="utf-8")) for f in sorted((sub / "flows").glob("*.yaml"))]
        name = sub.name
        if name == "train":
            out.train = docs
        elif name == "dev":
            out.dev = docs
        elif name.startswith("ood-"):
            out.ood[name[4:]] = docs
        else:
            continue
        catalog_path = sub / "catalog.jsonl"
        extracts_path = sub / "extracts.jsonl"
        out.extracts[name] = read_jsonl(extracts_path) if extracts_path.exists() else []
        out.catalogs[name] = (ElementCatalog.load(catalog_path) if catalog_path.exists()
                              else catalog_from_corpus(docs, out.extracts[name]))
    return out
