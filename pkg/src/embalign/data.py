"""In-memory dataset containers for paired and unpaired embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

__all__ = ["PairedDataset", "UnpairedResponses", "append_bias_column"]


def _as_matrix(a: np.ndarray, name: str) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-d, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")
    return a


@dataclass
class PairedDataset:
    """Rows of (input embedding, response embedding) pairs."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        self.x = _as_matrix(self.x, "x")
        self.y = _as_matrix(self.y, "y")
        if self.x.shape[0] != self.y.shape[0]:
            raise ShapeError(
                f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def in_dim(self) -> int:
        return self.x.shape[1]

    @property
    def out_dim(self) -> int:
        return self.y.shape[1]

    def subset(self, indices: np.ndarray) -> "PairedDataset":
        return PairedDataset(self.x[indices], self.y[indices])


@dataclass
class UnpairedResponses:
    """Response embeddings without matching inputs."""

    y: np.ndarray

    def __post_init__(self) -> None:
        self.y = _as_matrix(self.y, "y")

    @classmethod
    def empty(cls, out_dim: int) -> "UnpairedResponses":
        return cls(np.zeros((0, out_dim)))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def out_dim(self) -> int:
        return self.y.shape[1]


def append_bias_column(x: np.ndarray) -> np.ndarray:
    """Append a constant-1 input coordinate.

    Training on the augmented inputs absorbs a first-layer bias into the
    weight matrix, where it participates in the layer's lq norm like any
    other entry.
    """
    x = _as_matrix(x, "x")
    return np.hstack([x, np.ones((x.shape[0], 1))])
