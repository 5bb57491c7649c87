"""Variance eigenspaces, layer saturation and projection operators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DomainError, ShapeMismatch, ZeroVariance
from .numeric import EighResult
from .stats import fold_conv, unfold_conv

AT_LEAST = "at_least"
AT_MOST_PLUS_SLACK = "at_most_plus_slack"
POLICIES = (AT_LEAST, AT_MOST_PLUS_SLACK)

SOFT_SLACK = 0.02
# eigenvalues closer than this (relative to the largest) count as one degenerate eigenspace
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Eigenspace:
    basis: np.ndarray
    eigenvalues: np.ndarray
    k: int
    delta: float
    explained: float

    @property
    def width(self) -> int:
        return self.basis.shape[0]

    @property
    def saturation(self) -> float:
        return saturation(self.k, self.width)

    def to_dict(self, include_basis: bool = False) -> dict:
        out = {
            "width": self.width,
            "k": self.k,
            "delta": self.delta,
            "explained": self.explained,
            "eigenvalues": self.eigenvalues.tolist(),
        }
        if include_basis:
            out["basis"] = self.basis.tolist()
        return out


@dataclass(frozen=True)
class ProjectionOperator:
    p: np.ndarray
    rank: int

    @property
    def width(self) -> int:
        return self.p.shape[0]


def _cumulative_ratios(eigenvalues: np.ndarray) -> np.ndarray:
    lam = np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None)
    total = lam.sum()
    if not total > 0:
        raise ZeroVariance("all eigenvalues are zero; the layer output has no variance")
    return np.cumsum(lam) / total


def select_k(eigenvalues: np.ndarray, delta: float, policy: str = AT_LEAST) -> int:
    """Dimension of the variance eigenspace for threshold ``delta``.

    ``at_least``: smallest k whose top-k eigenvalues explain at least
    ``delta`` of the variance, widened to cover any eigenvalues tied with the
    k-th one. ``at_most_plus_slack``: largest k explaining at most ``delta``,
    plus one when the remaining shortfall is within ``SOFT_SLACK``.
    Both policies return at least 1, and ``delta == 1`` always selects the full
    space.
    """
    if not 0.0 < delta <= 1.0:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    if policy not in POLICIES:
        raise DomainError(f"unknown selection policy {policy!r}")
    lam = np.asarray(eigenvalues, dtype=np.float64)
    w = lam.shape[0]
    ratios = _cumulative_ratios(lam)
    if delta >= 1.0:
        return w

    if policy == AT_LEAST:
        k = int(np.searchsorted(ratios, delta, side="left")) + 1
        k = min(k, w)
        tie = TIE_RTOL * max(abs(lam[0]), np.finfo(float).tiny)
        while k < w and abs(lam[k] - lam[k - 1]) <= tie:
            k += 1
        return k

    below = np.nonzero(ratios <= delta)[0]
    if below.size == 0:
        return 1
    k = int(below[-1]) + 1
    shortfall = delta - ratios[k - 1]
    if 0.0 < shortfall <= SOFT_SLACK and k < w:
        k += 1
    return k


def select_eigenspace(eig: EighResult, delta: float, policy: str = AT_LEAST) -> Eigenspace:
    k = select_k(eig.eigenvalues, delta, policy)
    lam = np.clip(eig.eigenvalues, 0.0, None)
    explained = float(lam[:k].sum() / lam.sum())
    return Eigenspace(
        basis=np.ascontiguousarray(eig.eigenvectors[:, :k]),
        eigenvalues=np.asarray(eig.eigenvalues, dtype=np.float64),
        k=k,
        delta=float(delta),
        explained=explained,
    )


def saturation(k: int, width: int) -> float:
    """Share of the layer's output dimensions that the eigenspace occupies."""
    if not 1 <= k <= width:
        raise DomainError(f"need 1 <= k <= width, got k={k}, width={width}")
    return k / width


def projection_operator(e: Eigenspace) -> ProjectionOperator:
    return projection_from_basis(e.basis)


def projection_from_basis(basis: np.ndarray) -> ProjectionOperator:
    basis = np.asarray(basis, dtype=np.float64)
    p = basis @ basis.T
    return ProjectionOperator(0.5 * (p + p.T), basis.shape[1])


def project_dense(a: np.ndarray, op: ProjectionOperator) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[1] != op.width:
        raise DimensionMismatch(f"input of shape {a.shape} does not match projection width {op.width}")
    return a @ op.p


def project_conv(t: np.ndarray, op: ProjectionOperator) -> np.ndarray:
    """Project every spatial position's channel vector; a 1x1 convolution with ``op.p``."""
    t = np.asarray(t)
    if t.ndim != 4:
        raise ShapeMismatch(f"expected an N x C x H x W tensor, got shape {t.shape}")
    if t.shape[1] != op.width:
        raise DimensionMismatch(f"{t.shape[1]} channels do not match projection width {op.width}")
    return fold_conv(project_dense(unfold_conv(t), op), t.shape)
