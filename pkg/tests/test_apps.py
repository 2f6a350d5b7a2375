import numpy as np
import pytest

from ssip.apps import (
    EncodedCorpus,
    LabeledCorpus,
    LogisticModel,
    SparseFormatError,
    SparseVector,
    SyntheticSource,
    cosine_scores,
    custom_profile,
    default_codec,
    fit_naive_bayes,
    fixed_point_tolerance,
    knn_oracle,
    knn_pipeline,
    knn_vote,
    load_sparse,
    logreg_infer,
    logreg_oracle,
    nb_intersect,
    nb_oracle,
    normalize_l2,
    profile,
    save_sparse,
    secure_similarity,
    sigmoid,
    synthetic_corpus,
    write_predictions_csv,
)
from ssip.protocol import ProtocolConfig


def test_sparse_vector_basics():
    v = SparseVector.of([(0, 3.0), (4, 4.0)])
    assert v.dim == 5 and v.nnz == 2 and v.norm() == 5.0
    assert v.dot(SparseVector.of([(4, 0.5), (2, 9.0)])) == 2.0
    assert normalize_l2(v).norm() == pytest.approx(1.0)
    assert v.to_dense().tolist() == [3.0, 0, 0, 0, 4.0]
    with pytest.raises(ValueError):
        SparseVector.of([(1, 1.0), (1, 2.0)])
    with pytest.raises(ValueError):
        normalize_l2(SparseVector.of([], dim=3))


def test_load_save_round_trip(tmp_path):
    path = tmp_path / "c.svm"
    path.write_text("# header\n1 0:0.5 3:2\n\n-1 2:1.25  # trailing\n")
    corpus = load_sparse(path)
    assert corpus.labels == [1, -1]
    assert corpus.docs[0][0].as_dict() == {0: 0.5, 3: 2.0}
    assert corpus.dim == 4
    save_sparse(corpus, tmp_path / "out.svm")
    again = load_sparse(tmp_path / "out.svm")
    assert [v.entries for v in again.vectors] == [v.entries for v in corpus.vectors]


@pytest.mark.parametrize("line", ["1 0:1 0:2", "1 a:1", "1 -3:1", "1 5", "1 2:nan"])
def test_load_rejects_bad_lines(tmp_path, line):
    path = tmp_path / "bad.svm"
    path.write_text("0 1:1\n" + line + "\n")
    with pytest.raises(SparseFormatError) as err:
        load_sparse(path)
    assert err.value.line_no == 2


def test_synthetic_profiles(rng):
    news = profile("newsgroups")
    assert (news.classes, news.mean_nnz) == (20, 98)
    corpus = synthetic_corpus(news, 300, rng)
    assert abs(corpus.mean_nnz() - 98) <= 0.1 * 98
    assert set(corpus.labels) <= set(range(20))
    with pytest.raises(ValueError):
        profile("nope")
    with pytest.raises(ValueError):
        custom_profile(10, 20)


def test_synthetic_source_normalized(rng):
    source = SyntheticSource(custom_profile(100, 5, 3), rng, normalize=True)
    vec, label = source.sample()
    assert vec.norm() == pytest.approx(1.0) and label in range(3)


def test_knn_vote_ties():
    assert knn_vote([0.9, 0.9, 0.1], ["b", "a", "a"], 1) == "b"
    assert knn_vote([0.9, 0.8, 0.7, 0.6], ["b", "a", "a", "b"], 4) == "a"
    with pytest.raises(ValueError):
        knn_vote([1.0], ["a"], 2)


def test_secure_similarity_within_fixed_point_tolerance(rng):
    codec = default_codec()
    source = SyntheticSource(custom_profile(60, 6), rng, normalize=True)
    docs = [source.sample()[0] for _ in range(5)]
    query = source.sample()[0]
    want = cosine_scores(query, docs)
    for proto in ("ssip1", "ssip2", "batched"):
        result = secure_similarity(query, docs, proto, ProtocolConfig(seed=1), codec)
        t_match = max(len(set(query.ids) & set(d.ids)) for d in docs)
        assert np.max(np.abs(result.scores - want)) <= fixed_point_tolerance(t_match, codec)


def test_secure_similarity_unknown_protocol():
    with pytest.raises(ValueError):
        secure_similarity(SparseVector.of([(0, 1.0)]), [], "ssip7")


def test_encoded_corpus_caches_offline_phase(rng):
    codec = default_codec()
    source = SyntheticSource(custom_profile(50, 5), rng, normalize=True)
    encoded = EncodedCorpus([source.sample()[0] for _ in range(4)], codec, ProtocolConfig(seed=3))
    assert encoded.published() is encoded.published()
    result = secure_similarity(source.sample()[0], encoded)
    assert all(row["phase"] != "offline" or row["bytes"] == 0 for row in result.metric_rows)


def test_knn_matches_oracle(rng):
    source = SyntheticSource(custom_profile(200, 8, 2), rng)
    corpus = source.corpus(30)
    for _ in range(5):
        query, _ = source.sample()
        pred = knn_pipeline(query, corpus, 3, config=ProtocolConfig(seed=4))
        assert pred.label == knn_oracle(query, corpus, 3)
        assert len(pred.neighbours) == 3 and "reveal-scores" in pred.leakage


def test_logreg_matches_oracle(rng):
    weights = SparseVector.of([(i, float(w)) for i, w in enumerate(rng.normal(0, 1, 20))], dim=40)
    model = LogisticModel(weights, bias=-0.25)
    x = SparseVector.of([(i, float(v)) for i, v in zip(range(0, 40, 3), rng.uniform(0, 1, 14))], dim=40)
    result = logreg_infer(x, model, config=ProtocolConfig(seed=5))
    assert abs(result.probability - logreg_oracle(x, model)) <= 1e-3
    assert sigmoid(result.logit) == result.probability
    assert sigmoid(-800.0) == 0.0 and sigmoid(800.0) == 1.0


def test_logreg_rejects_multi_vector_corpus(rng):
    encoded = EncodedCorpus([SparseVector.of([(0, 1.0)])] * 2, default_codec())
    with pytest.raises(ValueError):
        logreg_infer(SparseVector.of([(0, 1.0)]), encoded)


def test_naive_bayes_matches_oracle(rng):
    train = synthetic_corpus(custom_profile(80, 6, 3), 60, rng)
    table = fit_naive_bayes(train)
    assert len(table.weights) == 3
    for vec, _ in synthetic_corpus(custom_profile(80, 6, 3), 5, rng).docs:
        want_scores, want_label = nb_oracle(vec, table)
        got = nb_intersect(vec, table, config=ProtocolConfig(seed=6))
        assert got.label == want_label
        assert np.max(np.abs(got.scores - want_scores)) <= 1e-3


def test_labeled_corpus_rejects_foreign_label():
    with pytest.raises(ValueError):
        LabeledCorpus([(SparseVector.of([(0, 1.0)]), 5)], classes=(0, 1))


def test_write_predictions_csv(tmp_path):
    path = tmp_path / "p.csv"
    write_predictions_csv(path, [{"query_id": 0, "item": 1, "score": 0.5, "label": "a", "x": 9}])
    assert path.read_text().splitlines() == ["query_id,item,score,label", "0,1,0.5,a"]
