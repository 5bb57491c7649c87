"""Dense double-precision primitives shared by the analysis modules.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Everything in
here is a pure function of its arguments, so it is safe to call from several
threads at once.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import (
    AsymmetricInput,
    DimensionError,
    DomainError,
    NoConvergence,
    NonSquare,
)

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
SYMMETRY_TOL = 1e-9
BETA_CF_TOL = 1e-14
BETA_CF_MAX_ITER = 1000


class EighResult(NamedTuple):
    """Eigenvalues sorted descending; column ``i`` of ``eigenvectors`` pairs with ``eigenvalues[i]``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _round_robin(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Circle-method tournament: m - 1 rounds of m/2 disjoint pairs covering
    # every unordered pair exactly once per sweep.
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        half = m // 2
        p = np.array(players[:half])
        q = np.array(players[::-1][:half])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    rows = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[rows, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eigh(m: np.ndarray) -> EighResult:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits all ``n(n-1)/2`` off-diagonal pairs in round-robin
    order; the ``n/2`` rotations of one round touch disjoint rows and columns
    and are applied together. Iteration stops once the off-diagonal Frobenius
    norm falls below ``JACOBI_TOL * ||m||_F``.

    Raises:
        NonSquare: ``m`` is not a square 2-D array.
        AsymmetricInput: ``|m - m.T|`` exceeds 1e-9 anywhere.
        NoConvergence: still not diagonal after ``JACOBI_MAX_SWEEPS`` sweeps.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix contains non-finite entries")
    n = a.shape[0]
    if n and np.max(np.abs(a - a.T)) > SYMMETRY_TOL:
        raise AsymmetricInput(
            f"matrix is not symmetric (max |m - m.T| = {np.max(np.abs(a - a.T)):.3g})"
        )
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n <= 1:
        return EighResult(np.diag(a).copy(), v)

    scale = np.linalg.norm(a)
    target = JACOBI_TOL * scale if scale > 0 else 0.0
    padded = n + (n % 2)
    rounds = []
    for p, q in _round_robin(padded):
        keep = q < n
        rounds.append((p[keep], q[keep]))

    offdiag = ~np.eye(n, dtype=bool)

    def off_norm() -> float:
        return float(np.linalg.norm(a[offdiag]))

    for _ in range(JACOBI_MAX_SWEEPS):
        if off_norm() <= target:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            app, aqq = a[p, p], a[q, q]
            tau = (aqq - app) / (2.0 * apq)
            # hypot avoids overflow of tau**2 when apq is tiny
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # A <- J^T A J with J[p,p]=J[q,q]=c, J[p,q]=s, J[q,p]=-s
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    else:
        if off_norm() > target:
            raise NoConvergence(
                f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps "
                f"(off-diagonal norm {off_norm():.3g})"
            )

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return EighResult(w[order], _fix_signs(v[:, order]))


def _beta_continued_fraction(x: float, a: float, b: float) -> float:
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, BETA_CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETA_CF_TOL:
            return h
    raise NoConvergence(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if not (a > 0 and b > 0) or not math.isfinite(a) or not math.isfinite(b):
        raise DomainError(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (
        a * math.log(x) + b * math.log1p(-x)
        + math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_continued_fraction(x, a, b) / a
    return 1.0 - math.exp(log_front) * _beta_continued_fraction(1.0 - x, b, a) / b


def two_tailed_t_p(t: float, df: float) -> float:
    """Two-tailed p-value of Student's t statistic with ``df`` degrees of freedom."""
    if not df >= 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {df}")
    if not math.isfinite(t):
        raise DomainError(f"t statistic must be finite, got {t}")
    return regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)


def rng_from_seed(*keys: int) -> np.random.Generator:
    """Philox (counter-based) generator keyed by ``keys``; no global state involved."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def random_orthonormal_basis(w: int, k: int, seed: int) -> np.ndarray:
    """Haar-random ``w x k`` matrix with orthonormal columns.

    QR of a Gaussian matrix, with the column signs fixed by ``diag(R) > 0`` so
    the result is uniformly distributed and reproducible from ``seed``.
    """
    if w < 1 or k < 1:
        raise DimensionError(f"width and dimension must be >= 1, got w={w}, k={k}")
    if k > w:
        raise DimensionError(f"cannot draw {k} orthonormal vectors in {w} dimensions")
    g = rng_from_seed(seed).standard_normal((w, k))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d
