"""Visually grounded word embeddings through a shared linear alignment trained on multilingual captions."""

from .data import EmbeddingTable, load_embeddings, tokenize
from .errors import GroundingError
from .model import GroundingModel, extract_grounded, init_model, load_model, save_model
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "EmbeddingTable",
    "GroundingError",
    "GroundingModel",
    "TrainConfig",
    "extract_grounded",
    "init_model",
    "load_embeddings",
    "load_model",
    "save_model",
    "tokenize",
    "train",
]
