"""convlink: entity linking with multi-granularity convolutional
similarity features and a sparse latent-query log-linear model."""

from .config import FeatureToggles, ModelConfig
from .embeddings import EmbeddingTable, load_word2vec
from .kb import NULL_ENTITY, KnowledgeBase, candidates_for, generate_queries
from .model import Model, infer, load_model, save_model, train
from .textproc import Document, Mention, Token, tokenize

__version__ = "0.1.0"

__all__ = [
    "Document", "EmbeddingTable", "FeatureToggles", "KnowledgeBase",
    "Mention", "Model", "ModelConfig", "NULL_ENTITY", "Token",
    "candidates_for", "generate_queries", "infer", "load_model",
    "load_word2vec", "save_model", "tokenize", "train", "__version__",
]
