import numpy as np
import pytest

from editgrpo.extractor import text_labels
from editgrpo.ontology import NO_FINDING
from editgrpo.world import (
    ALWAYS_COMMENTED,
    Case,
    WorldConfig,
    label_prevalence,
    make_corpus,
    read_jsonl,
    sample_case,
    split_corpus,
    write_jsonl,
)


@pytest.fixture(scope="module")
def corpus(onto):
    return make_corpus(WorldConfig(seed=3), onto, 2000)


def test_config_validation():
    with pytest.raises(ValueError):
        WorldConfig(normal_fraction=1.5)
    with pytest.raises(ValueError):
        WorldConfig(prevalence=(0.1,) * 12)
    with pytest.raises(ValueError):
        WorldConfig(feature_noise_sigma=-1)
    with pytest.raises(ValueError):
        WorldConfig(max_findings_per_case=0)


def test_reference_labels_match_truth(onto, corpus):
    for c in corpus:
        assert text_labels(c.reference_text, onto).tolist() == c.true_findings.tolist()
        assert onto.render(c.reference_ids) == c.reference_text


def test_abnormal_cases_have_bounded_findings(corpus):
    for c in corpus:
        k = int(c.true_findings[:NO_FINDING].sum())
        assert (k == 0) == c.is_normal
        assert k <= 3


def test_always_commented(onto, corpus):
    for c in corpus:
        for f in ALWAYS_COMMENTED:
            assert any(e[1] == f for t in c.reference_ids for e in onto.templates[t].entities)


def test_all_normal(onto):
    for c in make_corpus(WorldConfig(normal_fraction=1.0), onto, 50):
        assert c.is_normal
        assert onto.templates[c.reference_ids[0]].entities[0][1] == NO_FINDING


def test_noise_free_features(onto):
    for c in make_corpus(WorldConfig(feature_noise_sigma=0.0), onto, 50):
        assert np.array_equal(c.features[:14], c.true_findings.astype(float))
        assert c.features[14] == 1.0


def test_normal_fraction_bounds(onto):
    # n=100, p=0.9: 80 <= count <= 97 has probability > 0.99 under the binomial
    hits = 0
    for s in range(50):
        k = sum(c.is_normal for c in make_corpus(WorldConfig(normal_fraction=0.9, seed=s), onto, 100))
        hits += 80 <= k <= 97
    assert hits >= 48


def test_normal_fraction_converges(onto):
    corpus = make_corpus(WorldConfig(seed=11), onto, 10_000)
    assert abs(np.mean([c.is_normal for c in corpus]) - 0.7) < 0.02


def test_determinism_and_singleton(onto):
    a = make_corpus(WorldConfig(seed=5), onto, 30)
    b = make_corpus(WorldConfig(seed=5), onto, 30)
    assert [c.to_dict() for c in a] == [c.to_dict() for c in b]
    assert len(make_corpus(WorldConfig(), onto, 1)) == 1
    with pytest.raises(ValueError):
        make_corpus(WorldConfig(), onto, 0)


def test_rare_findings_are_rare(corpus):
    prev = label_prevalence(corpus)
    assert prev[10] < 0.03 and prev[11] < 0.03
    assert np.all(prev > 0)


def test_split_by_parity(corpus):
    tr, ev = split_corpus(corpus)
    assert all(c.case_id % 2 == 0 for c in tr) and all(c.case_id % 2 == 1 for c in ev)
    assert len(tr) + len(ev) == len(corpus)


def test_jsonl_round_trip(tmp_path, corpus):
    path = tmp_path / "corpus.jsonl"
    write_jsonl(corpus[:20], path)
    back = read_jsonl(path)
    assert [c.to_dict() for c in back] == [c.to_dict() for c in corpus[:20]]
    keys = set(__import__("json").loads(path.read_text().splitlines()[0]))
    assert keys == {"case_id", "true_findings", "features", "reference_template_ids", "reference_text"}


def test_sample_case_direct(onto):
    c = sample_case(WorldConfig(), onto, np.random.default_rng(0), case_id=4)
    assert isinstance(c, Case) and c.case_id == 4 and c.is_train
