"""Entity- and label-level report metrics and the composite scalar reward."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .extractor import ExtractionMode, Entity, entity_similarity, extract_report, segment_report, text_labels
from .ontology import N_FINDINGS, Ontology, Presence

COMPONENTS = ("radgraph_like", "chexbert_micro_14", "rate_like", "inverse_freq")
DEFAULT_COMPONENTS = ("radgraph_like", "chexbert_micro_14", "rate_like")


@dataclass(frozen=True)
class RewardBreakdown:
    radgraph_like: float
    chexbert_micro_14: float
    rate_like: float
    inverse_freq: float | None
    composite: float

    def to_dict(self) -> dict:
        return asdict(self)


def _entities(text: str, ontology: Ontology) -> list[Entity]:
    return extract_report(segment_report(text), ontology)


def _f1(tp: float, n_pred: float, n_ref: float) -> float:
    return 2.0 * tp / (n_pred + n_ref) if n_pred + n_ref else 1.0


def radgraph_like_f1(pred: str, ref: str, ontology: Ontology) -> float:
    """F1 over deduplicated exact (finding, presence) pairs."""
    p = {e.pair for e in _entities(pred, ontology)}
    r = {e.pair for e in _entities(ref, ontology)}
    return _f1(len(p & r), len(p), len(r))


def label_f1(pred_bits, ref_bits, labels, averaging: str = "micro", macro_empty: str = "skip") -> float:
    """Micro or macro F1 over the positive bits of the chosen label indices.

    ``pred_bits``/``ref_bits`` may be single vectors or (n, 14) matrices; counts
    are pooled over rows in both cases.
    """
    pred = np.atleast_2d(np.asarray(pred_bits))[:, list(labels)].astype(bool)
    ref = np.atleast_2d(np.asarray(ref_bits))[:, list(labels)].astype(bool)
    tp = (pred & ref).sum(axis=0)
    fp = (pred & ~ref).sum(axis=0)
    fn = (~pred & ref).sum(axis=0)
    if averaging == "micro":
        denom = 2 * tp.sum() + fp.sum() + fn.sum()
        return float(2 * tp.sum() / denom) if denom else 1.0
    if averaging != "macro":
        raise ValueError(f"unknown averaging {averaging!r}")
    denom = 2 * tp + fp + fn
    scores = []
    for k in range(len(tp)):
        if denom[k]:
            scores.append(2 * tp[k] / denom[k])
        elif macro_empty == "one":
            scores.append(1.0)
    return float(np.mean(scores)) if scores else 1.0


def scope_labels(ontology: Ontology, scope: str) -> list[int]:
    if scope == "all14":
        return list(range(N_FINDINGS))
    if scope == "subset5":
        return sorted(ontology.label_map[k] for k in ontology.five_subset)
    raise ValueError(f"unknown scope {scope!r}")


def chexbert_like_f1(
    pred: str, ref: str, ontology: Ontology, scope: str = "all14", averaging: str = "micro", macro_empty: str = "skip"
) -> float:
    return label_f1(
        text_labels(pred, ontology), text_labels(ref, ontology), scope_labels(ontology, scope), averaging, macro_empty
    )


def rate_like_f1(pred: str, ref: str, ontology: Ontology, tau_match: float = 0.5) -> float:
    """Soft entity F1: each entity scores its best label-agreeing cosine on the other side (if >= tau_match)."""
    if not 0.0 <= tau_match <= 1.0:
        raise ValueError("tau_match must lie in [0, 1]")
    p = list({(e.surface, e.presence): e for e in _entities(pred, ontology)}.values())
    r = list({(e.surface, e.presence): e for e in _entities(ref, ontology)}.values())
    if not p and not r:
        return 1.0
    if not p or not r:
        return 0.0

    def side(src, dst):
        total = 0.0
        for e in src:
            best = max(
                (entity_similarity(e, d, ontology, ExtractionMode.EMBEDDING) for d in dst if d.presence == e.presence),
                default=0.0,
            )
            total += best if best >= tau_match else 0.0
        return total / len(src)

    precision, recall = side(p, r), side(r, p)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def inverse_frequency_reward(pred: str, ref: str, ontology: Ontology, prevalence) -> float:
    prevalence = np.asarray(prevalence, dtype=float)
    if np.any(prevalence <= 0) or np.any(prevalence > 1):
        raise ValueError("prevalence entries must lie in (0, 1]")
    pb = text_labels(pred, ontology).astype(bool)
    rb = text_labels(ref, ontology).astype(bool)
    if not rb.any():
        return 0.0 if pb.any() else 1.0
    w = 1.0 / prevalence
    return float(w[rb & pb].sum() / w[rb].sum())


@dataclass(frozen=True)
class RewardParams:
    components: tuple[str, ...] = DEFAULT_COMPONENTS
    tau_match: float = 0.5
    prevalence: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.components:
            raise ValueError("at least one reward component required")
        bad = set(self.components) - set(COMPONENTS)
        if bad:
            raise ValueError(f"unknown reward components: {sorted(bad)}")
        if "inverse_freq" in self.components and self.prevalence is None:
            raise ValueError("inverse_freq needs a prevalence vector")


@lru_cache(maxsize=200_000)
def _composite_cached(pred: str, ref: str, ontology: Ontology, params: RewardParams) -> RewardBreakdown:
    rg = radgraph_like_f1(pred, ref, ontology)
    cx = chexbert_like_f1(pred, ref, ontology)
    rt = rate_like_f1(pred, ref, ontology, params.tau_match)
    inv = (
        inverse_frequency_reward(pred, ref, ontology, params.prevalence) if params.prevalence is not None else None
    )
    values = {"radgraph_like": rg, "chexbert_micro_14": cx, "rate_like": rt, "inverse_freq": inv}
    composite = float(sum(values[c] for c in params.components))
    return RewardBreakdown(rg, cx, rt, inv, composite)


def composite_reward(pred: str, ref: str, ontology: Ontology, params: RewardParams | None = None) -> RewardBreakdown:
    """Unweighted sum of the enabled components; every component is kept for logging."""
    return _composite_cached(pred, ref, ontology, params or RewardParams())
