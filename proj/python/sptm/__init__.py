"""Semantic phrase translation model: expected-BLEU training and N-best reranking."""

from ._sptm import (
    Corpus,
    Error,
    FormatError,
    IoError,
    Model,
    ShapeError,
    Vocabulary,
    build_vocabulary,
    corpus_bleu,
    expected_bleu,
    full_gradient,
    gradcheck,
    load_corpus,
    load_lambda,
    rerank,
    run_cli,
    save_lambda,
    sentence_bleu,
    synthesize,
    train,
    tune_lambda,
)

__all__ = [
    "Corpus",
    "Error",
    "FormatError",
    "IoError",
    "Model",
    "ShapeError",
    "Vocabulary",
    "build_vocabulary",
    "corpus_bleu",
    "expected_bleu",
    "full_gradient",
    "gradcheck",
    "load_corpus",
    "load_lambda",
    "rerank",
    "run_cli",
    "save_lambda",
    "sentence_bleu",
    "synthesize",
    "train",
    "tune_lambda",
]
