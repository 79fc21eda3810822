import itertools
import math

import numpy as np
import pytest

from editgrpo.extractor import extract_sentence_entities, segment_report
from editgrpo.ontology import (
    EMBED_DIM,
    FIVE_SUBSET,
    N_FINDINGS,
    NO_FINDING,
    Ontology,
    Presence,
    build_default_ontology,
    cosine,
    normalize,
    validate_ontology,
)


def canonical(onto, k):
    return next(lx for lx in onto.lexicon.values() if lx.finding == k and lx.is_synonym_of is None)


def test_basic_shape(onto):
    assert len(onto.findings) == N_FINDINGS
    assert onto.findings[NO_FINDING] == "No Finding"
    assert sorted(onto.label_map.values()) == list(range(N_FINDINGS))
    assert onto.five_subset == FIVE_SUBSET and NO_FINDING not in onto.five_subset
    texts = [t.text for t in onto.templates]
    assert len(set(texts)) == len(texts)
    assert all(t.text.endswith(".") and t.text.count(".") == 1 for t in onto.templates)


def test_unit_norm_embeddings(onto):
    for lx in onto.lexicon.values():
        assert lx.embedding.shape == (EMBED_DIM,)
        assert abs(np.linalg.norm(lx.embedding) - 1.0) < 1e-9


def test_canonical_axes_orthogonal_except_related(onto):
    related = {frozenset(p) for p in onto.related_pairs}
    for k, j in itertools.combinations(range(N_FINDINGS), 2):
        c = cosine(canonical(onto, k).embedding, canonical(onto, j).embedding)
        if frozenset((k, j)) in related:
            assert 0.65 <= c <= 0.75
        else:
            assert c == 0.0


def test_similarity_structure_exhaustive(onto):
    related = {frozenset(p) for p in onto.related_pairs}
    for a, b in itertools.combinations(onto.lexicon.values(), 2):
        c = cosine(a.embedding, b.embedding)
        if a.finding == b.finding:
            assert c >= 0.85
        elif frozenset((a.finding, b.finding)) in related:
            assert 0.65 <= c <= 0.75
        else:
            assert c <= 0.30


def test_synonyms_close_to_canonical(onto):
    syn = [lx for lx in onto.lexicon.values() if lx.is_synonym_of]
    assert syn
    for lx in syn:
        assert cosine(lx.embedding, onto.lexicon[lx.is_synonym_of].embedding) >= 0.85


def test_determinism():
    assert build_default_ontology(7).to_json() == build_default_ontology(7).to_json()


def test_json_round_trip(onto):
    again = Ontology.from_json(onto.to_json())
    assert again.to_json() == onto.to_json()


def test_cosine_examples():
    e0, e1 = np.eye(EMBED_DIM)[0], np.eye(EMBED_DIM)[1]
    assert cosine(e0, e0) == 1.0
    assert cosine(e0, e1) == 0.0
    u = np.eye(EMBED_DIM)[5]
    v = 0.95 * e0 + 0.05 * u
    assert cosine(normalize(v), e0) == pytest.approx(0.95 / np.linalg.norm(v), abs=1e-12)


def test_cosine_contract():
    with pytest.raises(ValueError):
        cosine(np.ones(3) / math.sqrt(3), np.eye(EMBED_DIM)[0])
    with pytest.raises(ValueError):
        cosine(np.eye(EMBED_DIM)[0] * 2, np.eye(EMBED_DIM)[0])


def test_every_pair_has_two_paraphrases(onto):
    pairs = {}
    for t in onto.templates:
        for _, f, p in t.entities:
            pairs.setdefault((f, p), set()).add(t.template_id)
    assert all(len(v) >= 2 for v in pairs.values())
    # every finding can be stated present
    assert all((f, Presence.PRESENT) in pairs for f in range(N_FINDINGS))


def test_gold_round_trip(onto):
    for t in onto.templates:
        got = [(e.surface, e.finding, e.presence) for e in extract_sentence_entities(t.text, onto)]
        assert got == list(t.entities)


def test_segment_examples(onto):
    assert segment_report("The heart is enlarged. No effusion.") == ["The heart is enlarged.", "No effusion."]
    assert segment_report("") == []
    for a, b in itertools.product(onto.templates, repeat=2):
        assert segment_report(onto.render([a.template_id, b.template_id])) == [a.text, b.text]


def test_validate_rejects_broken_geometry(onto):
    import dataclasses

    lex = dict(onto.lexicon)
    lx = lex["pleural fluid"]
    lex["pleural fluid"] = dataclasses.replace(lx, embedding=onto.lexicon["fracture"].embedding)
    with pytest.raises(ValueError):
        validate_ontology(dataclasses.replace(onto, lexicon=lex))
