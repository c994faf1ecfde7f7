"""Gaussian kernels over one or several embedding spaces.

The building block is the RBF kernel ``exp(-beta/2 * ||a - b||^2)``. Over
several spaces the product kernel multiplies one RBF factor per space,
each with its own bandwidth:

    k(x, y) = prod_s exp(-beta_s/2 * d_s(x, y)^2)
            = exp(-1/2 * sum_s beta_s * d_s(x, y)^2)

A product of positive-definite kernels is positive definite, so the
product form stays a valid kernel. Two algebraic consequences anchor the
test suite: with equal bandwidths the product over spaces equals a single
RBF on the concatenated vectors, and over two copies of the same space it
equals a single-space RBF at twice the bandwidth.

Squared distances are computed from the expansion
``||a||^2 + ||b||^2 - 2 a.b`` (one matmul per space). On unit-norm rows
this costs nothing beyond the Gram product. The expansion can go slightly
negative or drift off exact symmetry in floating point, so distance
matrices are clamped at zero, symmetric Gram distances are symmetrized
with an exactly zero diagonal, and kernel values are capped at 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DimensionMismatch, SchemaError
from .validation import check_embedding_map

__all__ = [
    "KernelSpec",
    "kernel_value",
    "sq_dists",
    "weighted_sq_dists",
    "gram",
    "cross_kernel",
]


@dataclass(frozen=True)
class KernelSpec:
    """Per-space RBF bandwidths, ordered. Hashable and immutable."""

    bandwidths: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if not self.bandwidths:
            raise SchemaError("a kernel needs at least one space")
        names = [name for name, _ in self.bandwidths]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate space in kernel: {names}")
        for name, beta in self.bandwidths:
            if not (np.isfinite(beta) and beta > 0):
                raise SchemaError(f"bandwidth for {name!r} must be finite and > 0, got {beta!r}")

    @classmethod
    def single(cls, space: str, beta: float) -> "KernelSpec":
        return cls(bandwidths=((space, float(beta)),))

    @classmethod
    def product(cls, betas: Mapping[str, float]) -> "KernelSpec":
        return cls(bandwidths=tuple((name, float(b)) for name, b in betas.items()))

    @property
    def spaces(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.bandwidths)

    def beta(self, space: str) -> float:
        for name, b in self.bandwidths:
            if name == space:
                return b
        raise KeyError(space)

    def as_dict(self) -> dict[str, float]:
        return dict(self.bandwidths)


def kernel_value(
    xa: Mapping[str, np.ndarray], xb: Mapping[str, np.ndarray], spec: KernelSpec
) -> float:
    """Kernel between two single vectors, by the direct product formula.

    Reference implementation: no expansion trick, one factor per space.
    """
    total = 1.0
    for space, beta in spec.bandwidths:
        a = np.asarray(xa[space], dtype=np.float64).ravel()
        b = np.asarray(xb[space], dtype=np.float64).ravel()
        if a.shape != b.shape:
            raise DimensionMismatch(
                f"space {space!r}: vectors of dim {a.shape[0]} vs {b.shape[0]}"
            )
        d2 = float(np.sum((a - b) ** 2))
        total *= float(np.exp(-0.5 * beta * d2))
    return total


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, (n, m) for (n, d) x (m, d)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionMismatch("sq_dists expects 2-D arrays")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(
            f"dim mismatch: {a.shape[1]} vs {b.shape[1]}"
        )
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d2 = aa + bb - 2.0 * (a @ b.T)
    # The expansion can dip below zero by rounding; distances cannot.
    np.maximum(d2, 0.0, out=d2)
    return d2


def weighted_sq_dists(
    xa: Mapping[str, np.ndarray], xb: Mapping[str, np.ndarray], spec: KernelSpec
) -> np.ndarray:
    """``sum_s beta_s * d_s^2`` between the rows of two embedding maps."""
    check_embedding_map(xa, required_spaces=spec.spaces, name="xa")
    check_embedding_map(xb, required_spaces=spec.spaces, name="xb")
    total: np.ndarray | None = None
    for space, beta in spec.bandwidths:
        d2 = beta * sq_dists(xa[space], xb[space])
        total = d2 if total is None else total + d2
    assert total is not None
    return total


def gram(x: Mapping[str, np.ndarray], spec: KernelSpec) -> np.ndarray:
    """Symmetric kernel matrix of a support set against itself.

    Exactly symmetric with a unit diagonal: the weighted distance matrix
    is averaged with its transpose and its diagonal pinned to zero before
    exponentiation, and values are capped at 1.
    """
    d2 = weighted_sq_dists(x, x, spec)
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, 0.0)
    k = np.exp(-0.5 * d2)
    np.minimum(k, 1.0, out=k)
    return k


def cross_kernel(
    xq: Mapping[str, np.ndarray], xs: Mapping[str, np.ndarray], spec: KernelSpec
) -> np.ndarray:
    """Kernel of queries against supports, (n_queries, n_supports)."""
    k = np.exp(-0.5 * weighted_sq_dists(xq, xs, spec))
    np.minimum(k, 1.0, out=k)
    return k
