"""kNN, logistic regression and naive Bayes with the inner products computed securely."""

import numpy as np

from ssip.apps import (
    EncodedCorpus,
    LogisticModel,
    SparseVector,
    SyntheticSource,
    custom_profile,
    default_codec,
    fit_naive_bayes,
    knn_oracle,
    knn_pipeline,
    logreg_infer,
    logreg_oracle,
    nb_intersect,
    nb_oracle,
    normalize_l2,
)
from ssip.protocol import ProtocolConfig

rng = np.random.default_rng(5)
codec = default_codec()
source = SyntheticSource(custom_profile(300, 8, 3), rng)
corpus = source.corpus(60)
encoded = EncodedCorpus([normalize_l2(v) for v in corpus.vectors], codec, ProtocolConfig(seed=1))
print(f"offline package for {len(encoded)} documents: {encoded.offline_bytes} bytes, sent once")

query, truth = source.sample()
pred = knn_pipeline(query, corpus, 5, config=ProtocolConfig(seed=2), codec=codec, encoded=encoded)
print("kNN:", pred.label, "| plaintext:", knn_oracle(query, corpus, 5), "| true class:", truth)
print("  leakage:", pred.leakage)

weights = SparseVector.of([(i, float(w)) for i, w in enumerate(rng.normal(0, 1, 300))])
model = LogisticModel(weights, bias=-0.2)
res = logreg_infer(query, model, config=ProtocolConfig(seed=3), codec=codec)
print(f"logistic: p={res.probability:.6f} | plaintext p={logreg_oracle(query, model):.6f}")

table = fit_naive_bayes(corpus)
nb = nb_intersect(query, table, config=ProtocolConfig(seed=4), codec=codec)
print("naive Bayes:", nb.label, "| plaintext:", nb_oracle(query, table)[1])
