"""Multi-layer embedding training for CTR models: factorized tables that collapse to one table at inference."""

from __future__ import annotations

from .ctrmodel import CtrModel, TrainConfig, train
from .embedding import EmbeddingBundle, InitSpec, collapse, init_mlet, init_single
from .metrics import EvalResult, evaluate
from .synthdata import GeneratorSpec, generate

__all__ = [
    "CtrModel",
    "EmbeddingBundle",
    "EvalResult",
    "GeneratorSpec",
    "InitSpec",
    "TrainConfig",
    "collapse",
    "evaluate",
    "generate",
    "init_mlet",
    "init_single",
    "train",
]

__version__ = "0.1.0"
