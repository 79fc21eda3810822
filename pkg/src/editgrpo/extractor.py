"""Rule-based entity extraction over the closed lexicon, with negation cues."""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .ontology import N_FINDINGS, NO_FINDING, Ontology, Presence


class ExtractionMode(str, enum.Enum):
    EMBEDDING = "embedding"  # cosine over lexeme embeddings
    EXACT = "exact"  # 1 for identical surfaces, else 0


@dataclass(frozen=True)
class Entity:
    surface: str
    finding: int
    presence: Presence
    sentence_index: int = 0

    @property
    def pair(self) -> tuple[int, Presence]:
        return (self.finding, self.presence)

    def to_dict(self) -> dict:
        return {
            "surface": self.surface,
            "finding": self.finding,
            "presence": self.presence.value,
            "sentence_index": self.sentence_index,
        }


_SPLIT = re.compile(r"\.")


def segment_report(text: str) -> list[str]:
    """Split on periods, trim, drop empty fragments, re-append the period."""
    return [frag.strip() + "." for frag in _SPLIT.split(text) if frag.strip()]


def join_sentences(sentences) -> str:
    return " ".join(sentences)


@lru_cache(maxsize=65536)
def _extract_cached(sentence: str, ontology: Ontology) -> tuple[Entity, ...]:
    out = []
    for m in ontology.mention_pattern.finditer(sentence):
        surface = m.group(1).lower()
        lx = ontology.lexicon[surface]
        negated = ontology.cue_pattern.search(sentence, 0, m.start()) is not None
        out.append(Entity(surface, lx.finding, Presence.ABSENT if negated else Presence.PRESENT))
    return tuple(out)


def extract_sentence_entities(sentence: str, ontology: Ontology) -> list[Entity]:
    return list(_extract_cached(sentence, ontology))


def extract_report(report, ontology: Ontology) -> list[Entity]:
    """Entities of a list of sentences, each tagged with its sentence index."""
    out = []
    for i, sent in enumerate(report):
        out.extend(replace(e, sentence_index=i) for e in _extract_cached(sent, ontology))
    return out


def entity_similarity(a: Entity, b: Entity, ontology: Ontology, mode: ExtractionMode) -> float:
    if a.surface == b.surface:
        return 1.0
    if mode is ExtractionMode.EXACT:
        return 0.0
    idx = ontology.surface_index
    return float(ontology.similarity[idx[a.surface], idx[b.surface]])


def labels_14(entities, ontology: Ontology) -> np.ndarray:
    """14 presence bits; any positive mention wins; No Finding iff no abnormal bit is set."""
    bits = np.zeros(N_FINDINGS, dtype=np.int8)
    for e in entities:
        if e.presence is Presence.PRESENT and e.finding != NO_FINDING:
            bits[ontology.label_map[e.finding]] = 1
    if not bits.any():
        bits[ontology.label_map[NO_FINDING]] = 1
    return bits


@lru_cache(maxsize=65536)
def text_labels(text: str, ontology: Ontology) -> np.ndarray:
    bits = labels_14(extract_report(segment_report(text), ontology), ontology)
    bits.setflags(write=False)
    return bits
