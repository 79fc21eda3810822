"""Post-rollout sentence-level editing of a generated report toward a reference.

One rule fires per step, in priority order:

  (a) mislabel replace: a surface shared by x_i and y_j with opposite presence;
      one such (i, j) pair is picked at random and x_i becomes y_j.
  (b) false-positive replace: x_i holds spurious entities and the best-matching
      reference sentence scores at least tau; x_i becomes that sentence.
  (c) false-positive delete: the first x_i still holding spurious entities is removed.
  (d) false-negative append: the first reference sentence carrying a missing
      (finding, presence) pair is appended.

Steps repeat until nothing applies (or ``max_edits`` is reached).  An empty
result is then swapped for the first unused false-negative sentence (e).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .extractor import (
    Entity,
    ExtractionMode,
    entity_similarity,
    extract_report,
    extract_sentence_entities,
    join_sentences,
    segment_report,
)
from .ontology import Ontology, Presence

# Well beyond any run over a consistent reference (bounded by |x| + |pairs(y)|).
_DIVERGENCE_GUARD = 1000


class Rule(str, enum.Enum):
    A_MISLABEL_REPLACE = "A_MislabelReplace"
    B_FP_REPLACE = "B_FpReplace"
    C_FP_DELETE = "C_FpDelete"
    D_FN_APPEND = "D_FnAppend"
    E_EMPTY_REPLACE = "E_EmptyReplace"


RULE_KEYS = {
    Rule.A_MISLABEL_REPLACE: "a",
    Rule.B_FP_REPLACE: "b",
    Rule.C_FP_DELETE: "c",
    Rule.D_FN_APPEND: "d",
    Rule.E_EMPTY_REPLACE: "e",
}


@dataclass(frozen=True)
class EditConfig:
    tau: float = 0.6
    max_edits: int | None = None  # None = unbounded
    mode: ExtractionMode = ExtractionMode.EMBEDDING
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.max_edits is not None and self.max_edits < 1:
            raise ValueError("max_edits must be positive or None")


@dataclass(frozen=True)
class EditStep:
    rule: Rule
    sentence_index: int
    inserted_text: str | None = None
    removed_text: str | None = None

    def to_dict(self) -> dict:
        return {
            "rule": self.rule.value,
            "sentence_index": self.sentence_index,
            "inserted_text": self.inserted_text,
            "removed_text": self.removed_text,
        }


@dataclass
class EditTrace:
    steps: list[EditStep] = field(default_factory=list)

    def replay(self, sentences) -> list[str]:
        out = list(sentences)
        for st in self.steps:
            apply_step(out, st)
        return out

    def histogram(self) -> dict[str, int]:
        counts = dict.fromkeys(RULE_KEYS.values(), 0)
        for st in self.steps:
            counts[RULE_KEYS[st.rule]] += 1
        return counts

    def to_list(self) -> list[dict]:
        return [st.to_dict() for st in self.steps]


@dataclass(frozen=True)
class EditResult:
    edited_text: str
    trace: EditTrace


def apply_step(sentences: list[str], st: EditStep) -> None:
    """Apply one trace record in place."""
    if st.rule in (Rule.A_MISLABEL_REPLACE, Rule.B_FP_REPLACE):
        sentences[st.sentence_index] = st.inserted_text
    elif st.rule is Rule.C_FP_DELETE:
        del sentences[st.sentence_index]
    elif st.rule is Rule.D_FN_APPEND:
        sentences.append(st.inserted_text)
    elif st.rule is Rule.E_EMPTY_REPLACE:
        sentences[:] = [st.inserted_text]


@dataclass
class NeighborhoodIndex:
    """For each reference sentence j, E[y_j]: member entity -> witness presence labels."""

    members: list[dict[Entity, frozenset[Presence]]]

    def supports(self, e: Entity) -> bool:
        return any(e.presence in m.get(e, ()) for m in self.members)


def _related(e: Entity, ref: Entity, tau: float, ontology: Ontology, mode: ExtractionMode) -> bool:
    # Identical surfaces always count (cos = 1), which keeps tau = 1 well defined.
    return e.surface == ref.surface or entity_similarity(e, ref, ontology, mode) > tau


def reference_neighborhoods(y, universe, cfg: EditConfig, ontology: Ontology) -> NeighborhoodIndex:
    members = []
    for sent in y:
        refs = extract_sentence_entities(sent, ontology)
        m: dict[Entity, set[Presence]] = {}
        for e in universe:
            for r in refs:
                if _related(e, r, cfg.tau, ontology, cfg.mode):
                    m.setdefault(e, set()).add(r.presence)
        members.append({e: frozenset(w) for e, w in m.items()})
    return NeighborhoodIndex(members)


def spurious_set(x_entities, index: NeighborhoodIndex) -> list[Entity]:
    return [e for e in x_entities if not index.supports(e)]


def _conflict(xi: list[Entity], yj: list[Entity]) -> bool:
    return any(a.surface == b.surface and a.presence != b.presence for a in xi for b in yj)


def _pairs(ents) -> set:
    return {e.pair for e in ents}


def edit_step(x, y, cfg: EditConfig, ontology: Ontology, rng: np.random.Generator):
    """One cascade step. Returns (edited sentences, step record or None)."""
    x = list(x)
    y = list(y)
    xe = [extract_report([s], ontology) for s in x]
    ye = [extract_report([s], ontology) for s in y]

    conflicts = [(i, j) for i in range(len(x)) for j in range(len(y)) if _conflict(xe[i], ye[j])]
    if conflicts:
        i, j = conflicts[int(rng.integers(len(conflicts)))]
        st = EditStep(Rule.A_MISLABEL_REPLACE, i, inserted_text=y[j], removed_text=x[i])
        apply_step(x, st)
        return x, st

    universe = extract_report(x, ontology) + extract_report(y, ontology)
    index = reference_neighborhoods(y, universe, cfg, ontology)
    x_tagged = extract_report(x, ontology)
    spurious_by_sentence: dict[int, list[Entity]] = {}
    for e in spurious_set(x_tagged, index):
        spurious_by_sentence.setdefault(e.sentence_index, []).append(e)

    for i in sorted(spurious_by_sentence):
        fp = list(dict.fromkeys(spurious_by_sentence[i]))
        best_j, best = None, -np.inf
        for j in range(len(y)):
            if y[j] == x[i]:
                continue
            pool = index.members[j]
            total = 0.0
            for e in fp:
                total += max((entity_similarity(e, u, ontology, cfg.mode) for u in pool), default=0.0)
            score = total / len(fp)
            if score > best:
                best_j, best = j, score
        if best_j is not None and best >= cfg.tau:
            st = EditStep(Rule.B_FP_REPLACE, i, inserted_text=y[best_j], removed_text=x[i])
            apply_step(x, st)
            return x, st

    if spurious_by_sentence:
        i = min(spurious_by_sentence)
        st = EditStep(Rule.C_FP_DELETE, i, removed_text=x[i])
        apply_step(x, st)
        return x, st

    have = _pairs(x_tagged)
    for j, ents in enumerate(ye):
        if any(e.pair not in have for e in ents):
            st = EditStep(Rule.D_FN_APPEND, len(x), inserted_text=y[j])
            apply_step(x, st)
            return x, st

    return x, None


def edit(x_text: str, y_text: str, cfg: EditConfig, ontology: Ontology, rng=None) -> EditResult:
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    x = segment_report(x_text)
    y = segment_report(y_text)
    trace = EditTrace()
    while cfg.max_edits is None or len(trace.steps) < cfg.max_edits:
        x, st = edit_step(x, y, cfg, ontology, rng)
        if st is None:
            break
        trace.steps.append(st)
        if len(trace.steps) > _DIVERGENCE_GUARD:
            raise RuntimeError("edit cascade failed to terminate; reference is self-contradictory")

    if not x:
        for j, sent in enumerate(y):
            if sent not in x and extract_sentence_entities(sent, ontology):
                st = EditStep(Rule.E_EMPTY_REPLACE, 0, inserted_text=sent)
                apply_step(x, st)
                trace.steps.append(st)
                break
    return EditResult(join_sentences(x), trace)


def paragraph_edit(x_text: str, y_text: str) -> str:
    """Whole-report replacement by the reference."""
    return y_text


def potential(x, y, cfg: EditConfig, ontology: Ontology) -> tuple[int, int, int]:
    """Lexicographic termination potential: (surface conflicts, spurious sentences, missing pairs)."""
    xe = [extract_report([s], ontology) for s in x]
    ye = [extract_report([s], ontology) for s in y]
    n_conf = sum(_conflict(a, b) for a in xe for b in ye)
    x_tagged = extract_report(x, ontology)
    universe = x_tagged + extract_report(y, ontology)
    index = reference_neighborhoods(y, universe, cfg, ontology)
    n_spur = len({e.sentence_index for e in spurious_set(x_tagged, index)})
    n_missing = len(_pairs(extract_report(y, ontology)) - _pairs(x_tagged))
    return (n_conf, n_spur, n_missing)
