"""Closed synthetic report world: findings, lexicon, embeddings and sentence templates.

Every sentence the system can produce is one of a fixed set of templates whose
entity annotations are known, so extraction over rendered reports is exact.
Embeddings live in a 16-dim space where each finding owns one axis; the two
spare axes carry the small per-synonym offsets.
"""
from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

EMBED_DIM = 16
N_FINDINGS = 14
NO_FINDING = 13

FINDINGS = (
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
    "No Finding",
)

# Standard CheXpert competition subset.
FIVE_SUBSET = frozenset({1, 4, 5, 7, 9})

NEGATION_CUES = ("no", "without", "free of", "within normal limits", "resolved")

# Cosine between a synonym and its canonical lexeme.
SYNONYM_COS = 0.9
# Cosine between the canonical lexemes of a designated related pair.
RELATED_COS = 0.74


class Presence(str, enum.Enum):
    PRESENT = "present"
    ABSENT = "absent"


@dataclass(frozen=True)
class EntityLexeme:
    surface: str
    finding: int
    embedding: np.ndarray = field(compare=False, repr=False)
    is_synonym_of: str | None = None


@dataclass(frozen=True)
class SentenceTemplate:
    template_id: int
    text: str
    entities: tuple[tuple[str, int, Presence], ...]


# (canonical surface, synonym surfaces) per finding.
_LEXICON_TABLE: dict[int, tuple[str, tuple[str, ...]]] = {
    0: ("enlarged cardiomediastinum", ()),
    1: ("cardiomegaly", ("heart is enlarged",)),
    2: ("lung opacity", ("airspace opacity",)),
    3: ("lung lesion", ("pulmonary nodule",)),
    4: ("pulmonary edema", ("vascular congestion",)),
    5: ("consolidation", ()),
    6: ("pneumonia", ("infectious process",)),
    7: ("atelectasis", ("volume loss",)),
    8: ("pneumothorax", ("pleural air",)),
    9: ("pleural effusion", ("pleural fluid",)),
    10: ("pleural thickening", ("pleural scarring",)),
    11: ("fracture", ("cortical break",)),
    12: ("support devices", ("endotracheal tube",)),
    13: ("no acute cardiopulmonary abnormality", ("no acute cardiopulmonary process",)),
}

# (anchor, dependent): the dependent's canonical axis is tilted toward the anchor.
# Dependents carry no synonyms so every cross-pair cosine stays inside [0.65, 0.75].
RELATED_PAIRS = ((1, 0), (2, 5))

P, A = Presence.PRESENT, Presence.ABSENT

# Template texts with their gold (surface, finding, presence) annotations.
_TEMPLATE_TABLE: tuple[tuple[str, tuple[tuple[str, int, Presence], ...]], ...] = (
    ("Enlarged cardiomediastinum is noted.", (("enlarged cardiomediastinum", 0, P),)),
    ("The contour suggests enlarged cardiomediastinum.", (("enlarged cardiomediastinum", 0, P),)),
    ("Moderate cardiomegaly.", (("cardiomegaly", 1, P),)),
    ("The heart is enlarged.", (("heart is enlarged", 1, P),)),
    ("There is a right lung opacity.", (("lung opacity", 2, P),)),
    ("Patchy airspace opacity is seen.", (("airspace opacity", 2, P),)),
    ("A lung lesion is seen.", (("lung lesion", 3, P),)),
    ("There is a pulmonary nodule.", (("pulmonary nodule", 3, P),)),
    ("Mild pulmonary edema.", (("pulmonary edema", 4, P),)),
    ("There is vascular congestion.", (("vascular congestion", 4, P),)),
    ("Focal consolidation is seen.", (("consolidation", 5, P),)),
    ("Left lower lobe consolidation.", (("consolidation", 5, P),)),
    ("Findings suggest pneumonia.", (("pneumonia", 6, P),)),
    ("Likely infectious process.", (("infectious process", 6, P),)),
    ("Bibasilar atelectasis.", (("atelectasis", 7, P),)),
    ("Mild basilar volume loss.", (("volume loss", 7, P),)),
    ("Small right pneumothorax.", (("pneumothorax", 8, P),)),
    ("Apical pleural air is seen.", (("pleural air", 8, P),)),
    ("Small left pleural effusion.", (("pleural effusion", 9, P),)),
    ("Layering pleural fluid is seen.", (("pleural fluid", 9, P),)),
    ("Apical pleural thickening.", (("pleural thickening", 10, P),)),
    ("Chronic pleural scarring.", (("pleural scarring", 10, P),)),
    ("There is a rib fracture.", (("fracture", 11, P),)),
    ("A cortical break is seen.", (("cortical break", 11, P),)),
    ("Support devices are in standard position.", (("support devices", 12, P),)),
    ("An endotracheal tube is in place.", (("endotracheal tube", 12, P),)),
    ("No acute cardiopulmonary abnormality.", (("no acute cardiopulmonary abnormality", 13, P),)),
    ("No acute cardiopulmonary process.", (("no acute cardiopulmonary process", 13, P),)),
    ("No pneumothorax.", (("pneumothorax", 8, A),)),
    ("There is no pneumothorax.", (("pneumothorax", 8, A),)),
    ("No pleural effusion.", (("pleural effusion", 9, A),)),
    ("There is no pleural effusion.", (("pleural effusion", 9, A),)),
    ("No cardiomegaly.", (("cardiomegaly", 1, A),)),
    ("No evidence of cardiomegaly.", (("cardiomegaly", 1, A),)),
    ("No focal consolidation.", (("consolidation", 5, A),)),
    ("The lungs are free of consolidation.", (("consolidation", 5, A),)),
    ("No pleural effusion or pneumothorax.", (("pleural effusion", 9, A), ("pneumothorax", 8, A))),
    ("Cardiomegaly with mild pulmonary edema.", (("cardiomegaly", 1, P), ("pulmonary edema", 4, P))),
)


def normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors (their dot product)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    for v in (a, b):
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("cosine expects unit vectors")
    return float(np.dot(a, b))


@dataclass(frozen=True, eq=False)
class Ontology:
    findings: tuple[str, ...]
    lexicon: dict[str, EntityLexeme]
    templates: tuple[SentenceTemplate, ...]
    negation_cues: tuple[str, ...]
    label_map: dict[int, int]
    five_subset: frozenset[int]
    related_pairs: tuple[tuple[int, int], ...] = ()

    @property
    def vocab_size(self) -> int:
        return len(self.templates)

    @property
    def end_token(self) -> int:
        return len(self.templates)

    @cached_property
    def surfaces(self) -> tuple[str, ...]:
        return tuple(self.lexicon)

    @cached_property
    def surface_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.surfaces)}

    @cached_property
    def similarity(self) -> np.ndarray:
        """Pairwise lexeme cosine matrix, indexed like ``surfaces``."""
        # Per-pair dot products so entries equal cosine() bit-for-bit.
        emb = [self.lexicon[s].embedding for s in self.surfaces]
        return np.array([[float(np.dot(a, b)) for b in emb] for a in emb])

    @cached_property
    def text_to_id(self) -> dict[str, int]:
        return {t.text: t.template_id for t in self.templates}

    @cached_property
    def mention_pattern(self) -> re.Pattern:
        alts = sorted(self.lexicon, key=len, reverse=True)
        return re.compile(r"\b(" + "|".join(re.escape(s) for s in alts) + r")\b", re.IGNORECASE)

    @cached_property
    def cue_pattern(self) -> re.Pattern:
        return re.compile(
            r"\b(" + "|".join(re.escape(c) for c in self.negation_cues) + r")\b", re.IGNORECASE
        )

    def render(self, template_ids) -> str:
        return " ".join(self.templates[t].text for t in template_ids)

    def templates_for(self, finding: int, presence: Presence) -> list[int]:
        """Single-entity templates asserting exactly (finding, presence)."""
        return [
            t.template_id
            for t in self.templates
            if len(t.entities) == 1 and t.entities[0][1:] == (finding, presence)
        ]

    def to_dict(self) -> dict:
        return {
            "findings": list(self.findings),
            "lexicon": [
                {
                    "surface": lx.surface,
                    "finding": lx.finding,
                    "embedding": [float(x) for x in lx.embedding],
                    "is_synonym_of": lx.is_synonym_of,
                }
                for lx in self.lexicon.values()
            ],
            "templates": [
                {
                    "template_id": t.template_id,
                    "text": t.text,
                    "entities": [[s, f, p.value] for s, f, p in t.entities],
                }
                for t in self.templates
            ],
            "negation_cues": list(self.negation_cues),
            "label_map": {str(k): v for k, v in self.label_map.items()},
            "five_subset": sorted(self.five_subset),
            "related_pairs": [list(p) for p in self.related_pairs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Ontology":
        lexicon = {
            e["surface"]: EntityLexeme(
                e["surface"], int(e["finding"]), np.asarray(e["embedding"], dtype=float), e["is_synonym_of"]
            )
            for e in d["lexicon"]
        }
        templates = tuple(
            SentenceTemplate(
                int(t["template_id"]), t["text"], tuple((s, int(f), Presence(p)) for s, f, p in t["entities"])
            )
            for t in d["templates"]
        )
        onto = cls(
            findings=tuple(d["findings"]),
            lexicon=lexicon,
            templates=templates,
            negation_cues=tuple(d["negation_cues"]),
            label_map={int(k): int(v) for k, v in d["label_map"].items()},
            five_subset=frozenset(d["five_subset"]),
            related_pairs=tuple(tuple(p) for p in d.get("related_pairs", [])),
        )
        validate_ontology(onto)
        return onto

    @classmethod
    def from_json(cls, text: str) -> "Ontology":
        return cls.from_dict(json.loads(text))


def _synonym_offset(rng: np.random.Generator) -> np.ndarray:
    # Offsets live in the two spare axes, within a 60 degree cone, so synonyms
    # of one finding stay >= 0.9 similar and synonyms of unrelated findings <= 0.19.
    angle = rng.uniform(0.0, math.pi / 3)
    u = np.zeros(EMBED_DIM)
    u[N_FINDINGS] = math.cos(angle)
    u[N_FINDINGS + 1] = math.sin(angle)
    return u


def build_default_ontology(seed: int = 7) -> Ontology:
    rng = np.random.default_rng(seed)
    axes = np.eye(EMBED_DIM)
    canonical = {k: axes[k].copy() for k in range(N_FINDINGS)}
    for anchor, dep in RELATED_PAIRS:
        canonical[dep] = RELATED_COS * axes[anchor] + math.sqrt(1 - RELATED_COS**2) * axes[dep]

    lexicon: dict[str, EntityLexeme] = {}
    for k in range(N_FINDINGS):
        canon, synonyms = _LEXICON_TABLE[k]
        lexicon[canon] = EntityLexeme(canon, k, canonical[k])
        for syn in synonyms:
            emb = SYNONYM_COS * canonical[k] + math.sqrt(1 - SYNONYM_COS**2) * _synonym_offset(rng)
            lexicon[syn] = EntityLexeme(syn, k, normalize(emb), is_synonym_of=canon)

    templates = tuple(SentenceTemplate(i, text, ents) for i, (text, ents) in enumerate(_TEMPLATE_TABLE))
    onto = Ontology(
        findings=FINDINGS,
        lexicon=lexicon,
        templates=templates,
        negation_cues=NEGATION_CUES,
        label_map={k: k for k in range(N_FINDINGS)},
        five_subset=FIVE_SUBSET,
        related_pairs=RELATED_PAIRS,
    )
    validate_ontology(onto)
    return onto


def validate_ontology(onto: Ontology) -> None:
    """Exhaustively check the structural and similarity invariants; raise ValueError on failure."""
    if len(onto.findings) != N_FINDINGS:
        raise ValueError("exactly 14 findings required")
    if sorted(onto.label_map.values()) != list(range(N_FINDINGS)):
        raise ValueError("label_map must be a bijection onto 0..13")
    if len(onto.five_subset) != 5 or NO_FINDING in onto.five_subset:
        raise ValueError("five_subset must hold 5 abnormal findings")
    texts = [t.text for t in onto.templates]
    if len(set(texts)) != len(texts):
        raise ValueError("template texts must be distinct")
    for t in onto.templates:
        if not t.text.endswith(".") or "." in t.text[:-1]:
            raise ValueError(f"template must end in its only period: {t.text!r}")

    related = {frozenset(p) for p in onto.related_pairs}
    lexemes = list(onto.lexicon.values())
    for lx in lexemes:
        if abs(np.linalg.norm(lx.embedding) - 1.0) > 1e-9:
            raise ValueError(f"non-unit embedding for {lx.surface!r}")
    for i, a in enumerate(lexemes):
        for b in lexemes[i + 1 :]:
            c = float(a.embedding @ b.embedding)
            if a.finding == b.finding:
                ok = c >= 0.85
            elif frozenset((a.finding, b.finding)) in related:
                ok = 0.65 <= c <= 0.75
            else:
                ok = c <= 0.30
            if not ok:
                raise ValueError(f"similarity invariant broken: {a.surface!r}/{b.surface!r} cos={c:.4f}")
