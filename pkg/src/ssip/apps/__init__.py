"""Machine-learning pipelines built on secure sparse inner products."""

from .data import (
    PROFILES,
    LabeledCorpus,
    SparseFormatError,
    SparseVector,
    SparsityProfile,
    SyntheticSource,
    custom_profile,
    load_sparse,
    normalize_l2,
    profile,
    save_sparse,
    synthetic_corpus,
    synthetic_vector,
)
from .pipelines import (
    EncodedCorpus,
    KnnPrediction,
    LogisticModel,
    LogRegResult,
    NaiveBayesTable,
    NbResult,
    SimilarityResult,
    cosine_scores,
    default_codec,
    fit_naive_bayes,
    fixed_point_tolerance,
    knn_classify,
    knn_oracle,
    knn_pipeline,
    knn_vote,
    logreg_infer,
    logreg_oracle,
    nb_intersect,
    nb_oracle,
    secure_similarity,
    sigmoid,
    write_predictions_csv,
)
