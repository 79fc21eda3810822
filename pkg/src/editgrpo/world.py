"""Synthetic imbalanced case generator standing in for chest X-ray studies."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ontology import N_FINDINGS, NO_FINDING, Ontology, Presence

# Findings whose absence is always stated in a reference report.
ALWAYS_COMMENTED = (8, 9)

# Relative weights for drawing the abnormal findings of an abnormal case.
# Pleural Other (10) and Fracture (11) are the two rare findings.
DEFAULT_PREVALENCE = (
    0.05,  # Enlarged Cardiomediastinum
    0.30,  # Cardiomegaly
    0.25,  # Lung Opacity
    0.05,  # Lung Lesion
    0.20,  # Edema
    0.10,  # Consolidation
    0.08,  # Pneumonia
    0.25,  # Atelectasis
    0.06,  # Pneumothorax
    0.30,  # Pleural Effusion
    0.02,  # Pleural Other
    0.02,  # Fracture
    0.25,  # Support Devices
)


@dataclass(frozen=True)
class WorldConfig:
    normal_fraction: float = 0.7
    prevalence: tuple[float, ...] = DEFAULT_PREVALENCE
    feature_noise_sigma: float = 0.3
    max_findings_per_case: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.normal_fraction <= 1.0:
            raise ValueError("normal_fraction must lie in [0, 1]")
        if len(self.prevalence) != N_FINDINGS - 1:
            raise ValueError("prevalence needs one entry per abnormal finding (13)")
        if any(not 0.0 <= p <= 1.0 for p in self.prevalence) or sum(self.prevalence) <= 0:
            raise ValueError("prevalence entries must lie in [0, 1] with positive total")
        if self.feature_noise_sigma < 0:
            raise ValueError("feature_noise_sigma must be non-negative")
        if self.max_findings_per_case < 1:
            raise ValueError("max_findings_per_case must be >= 1")


@dataclass(frozen=True)
class Case:
    case_id: int
    true_findings: np.ndarray = field(compare=False)
    features: np.ndarray = field(compare=False)  # 14 noisy evidence values + constant bias
    reference_ids: tuple[int, ...]
    reference_text: str

    @property
    def is_normal(self) -> bool:
        return bool(self.true_findings[NO_FINDING])

    @property
    def is_train(self) -> bool:
        return self.case_id % 2 == 0

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "true_findings": [int(b) for b in self.true_findings],
            "features": [float(v) for v in self.features],
            "reference_template_ids": list(self.reference_ids),
            "reference_text": self.reference_text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Case":
        return cls(
            int(d["case_id"]),
            np.asarray(d["true_findings"], dtype=np.int8),
            np.asarray(d["features"], dtype=float),
            tuple(int(t) for t in d["reference_template_ids"]),
            d["reference_text"],
        )


FEATURE_DIM = N_FINDINGS + 1


def sample_case(cfg: WorldConfig, ontology: Ontology, rng: np.random.Generator, case_id: int = 0) -> Case:
    bits = np.zeros(N_FINDINGS, dtype=np.int8)
    if rng.random() < cfg.normal_fraction:
        bits[NO_FINDING] = 1
    else:
        weights = np.asarray(cfg.prevalence, dtype=float)
        k = int(rng.integers(1, cfg.max_findings_per_case + 1))
        k = min(k, int(np.count_nonzero(weights)))
        chosen = rng.choice(N_FINDINGS - 1, size=k, replace=False, p=weights / weights.sum())
        bits[chosen] = 1

    ids = []
    for f in range(N_FINDINGS):
        if bits[f]:
            options = ontology.templates_for(f, Presence.PRESENT)
            ids.append(options[int(rng.integers(len(options)))])
    for f in ALWAYS_COMMENTED:
        if not bits[f]:
            options = ontology.templates_for(f, Presence.ABSENT)
            ids.append(options[int(rng.integers(len(options)))])

    noise = rng.normal(0.0, cfg.feature_noise_sigma, N_FINDINGS) if cfg.feature_noise_sigma > 0 else 0.0
    features = np.append(bits + noise, 1.0)
    return Case(case_id, bits, features, tuple(ids), ontology.render(ids))


def make_corpus(cfg: WorldConfig, ontology: Ontology, n: int) -> list[Case]:
    """``n`` cases, each from its own stream derived from (seed, case_id).

    Even case ids are training cases, odd ids evaluation.
    """
    if n <= 0:
        raise ValueError("corpus size must be positive")
    return [sample_case(cfg, ontology, np.random.default_rng([cfg.seed, i]), case_id=i) for i in range(n)]


def split_corpus(corpus: list[Case]) -> tuple[list[Case], list[Case]]:
    return [c for c in corpus if c.is_train], [c for c in corpus if not c.is_train]


def write_jsonl(cases, path) -> None:
    with open(path, "w") as fh:
        for c in cases:
            fh.write(json.dumps(c.to_dict(), sort_keys=True) + "\n")


def read_jsonl(path) -> list[Case]:
    with open(path) as fh:
        return [Case.from_dict(json.loads(line)) for line in fh if line.strip()]


def label_prevalence(cases) -> np.ndarray:
    """Per-label positive frequency, floored so every entry is a valid inverse-frequency weight."""
    bits = np.array([c.true_findings for c in cases], dtype=float)
    return np.clip(bits.mean(axis=0), 1.0 / (len(cases) + 1), 1.0)
