"""Saturation reports, tail detection, paired t-tests and the width advisor."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    DegenerateBaseline,
    DomainError,
    NoQualifyingDelta,
    TooFewLayers,
    TooFewPairs,
    ZeroVariance,
)
from .numeric import two_tailed_t_p

TAIL_MIN_LENGTH = 3
TAIL_RATIO = 0.5
SWEET_SPOT = (0.20, 0.30)
SWEET_CENTRE = 0.25


@dataclass
class SaturationReport:
    layers: list[str]
    widths: list[int]
    ks: list[int]
    saturations: list[float]
    mean_saturation: float
    epoch: int
    delta: float
    explained: list[float] = field(default_factory=list)

    @classmethod
    def from_eigenspaces(cls, names, eigenspaces, epoch: int, delta: float) -> SaturationReport:
        widths = [e.width for e in eigenspaces]
        ks = [e.k for e in eigenspaces]
        sats = [k / w for k, w in zip(ks, widths)]
        return cls(list(names), widths, ks, sats, float(np.mean(sats)) if sats else float("nan"),
                   epoch, float(delta), [e.explained for e in eigenspaces])

    @property
    def sum_dims(self) -> int:
        return int(sum(self.ks))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> SaturationReport:
        return cls(**data)


@dataclass(frozen=True)
class TailPattern:
    start: int
    end: int
    tail_mean: float
    rest_mean: float

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def _qualifying(s: np.ndarray) -> np.ndarray:
    """Boolean matrix ``q[a, b]``: window ``a..b`` (inclusive) is a tail candidate.

    A candidate has at least ``TAIL_MIN_LENGTH`` layers, a non-empty rest, a
    mean saturation at most ``TAIL_RATIO`` times the mean of the rest, and
    both of its end layers individually below that same bound.
    """
    n = len(s)
    prefix = np.concatenate([[0.0], np.cumsum(s)])
    a = np.arange(n)[:, None]
    b = np.arange(n)[None, :]
    length = b - a + 1
    rest_len = n - length
    valid = (length >= TAIL_MIN_LENGTH) & (rest_len > 0)
    win_sum = prefix[np.minimum(b + 1, n)] - prefix[a]
    with np.errstate(divide="ignore", invalid="ignore"):
        win_mean = win_sum / length
        bound = TAIL_RATIO * (prefix[n] - win_sum) / rest_len
    ends_low = (s[a] <= bound) & (s[np.minimum(b, n - 1)] <= bound)
    return valid & (win_mean <= bound) & ends_low


def detect_tails(saturations) -> list[TailPattern]:
    """Maximal runs of low-saturation layers.

    Returns every candidate window (see :func:`_qualifying`) that is not
    contained in a larger candidate. Should two maximal windows overlap, the
    longer one (then the earlier one) is kept. Result is sorted by start.
    """
    s = np.asarray(saturations, dtype=np.float64)
    n = len(s)
    if n < TAIL_MIN_LENGTH + 1:
        raise TooFewLayers(f"tail detection needs at least {TAIL_MIN_LENGTH + 1} layers, got {n}")
    q = _qualifying(s)
    # covered[a, b]: some candidate a' <= a, b' >= b exists (suffix-OR over b, prefix-OR over a)
    covered = np.logical_or.accumulate(q[:, ::-1], axis=1)[:, ::-1]
    covered = np.logical_or.accumulate(covered, axis=0)
    strictly = np.zeros_like(q)
    strictly[1:, :] |= covered[:-1, :]
    strictly[:, :-1] |= covered[:, 1:]
    starts, ends = np.nonzero(q & ~strictly)
    return _resolve_overlaps(s, list(zip(starts.tolist(), ends.tolist())))


def _resolve_overlaps(s: np.ndarray, windows: list[tuple[int, int]]) -> list[TailPattern]:
    chosen: list[tuple[int, int]] = []
    for a, b in sorted(windows, key=lambda w: (-(w[1] - w[0]), w[0])):
        if all(b < c or a > d for c, d in chosen):
            chosen.append((a, b))
    tails = []
    total = float(s.sum())
    for a, b in sorted(chosen):
        inside = float(s[a:b + 1].sum())
        rest_n = len(s) - (b - a + 1)
        tails.append(TailPattern(a, b, inside / (b - a + 1), (total - inside) / rest_n))
    return tails


@dataclass
class TTestResult:
    n: int
    mean_diff: float
    std: float
    t: float
    p: float

    def to_dict(self) -> dict:
        return asdict(self)


def paired_t_test(pairs) -> TTestResult:
    """Two-tailed paired t-test on ``projected - base`` accuracy differences."""
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise DomainError("pairs must be a sequence of (projected, base) tuples")
    n = len(pairs)
    if n < 2:
        raise TooFewPairs(f"a paired t-test needs at least 2 pairs, got {n}")
    d = pairs[:, 0] - pairs[:, 1]
    mean = float(d.mean())
    std = float(d.std(ddof=1))
    if std == 0.0:
        raise ZeroVariance(f"all {n} differences equal {mean}; the t statistic is undefined")
    t = mean / (std / math.sqrt(n))
    return TTestResult(n, mean, std, t, two_tailed_t_p(t, n - 1))


def relative_performance(projected_acc: float, base_acc: float) -> float:
    if not base_acc > 0:
        raise DegenerateBaseline(f"baseline accuracy must be positive, got {base_acc}")
    return projected_acc / base_acc


@dataclass
class DeltaRow:
    delta: float
    n: int
    mean_diff: float
    std: float
    t: float
    p: float
    significant: bool
    status: str = "ok"


def sweep_row(delta: float, pairs) -> DeltaRow:
    """One row of a delta sweep; degenerate cases become flagged rows instead of errors.

    All-identical differences of zero are treated as not significant (p = 1);
    a constant non-zero shift as significant (p = 0).
    """
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    n = len(pairs)
    diffs = pairs[:, 0] - pairs[:, 1] if n else np.zeros(0)
    mean = float(diffs.mean()) if n else float("nan")
    try:
        r = paired_t_test(pairs)
    except TooFewPairs:
        return DeltaRow(delta, n, mean, float("nan"), float("nan"), float("nan"), False, "TooFewPairs")
    except ZeroVariance:
        p = 1.0 if mean == 0.0 else 0.0
        return DeltaRow(delta, n, mean, 0.0, float("nan"), p, p < 1.0, "ZeroVariance")
    return DeltaRow(delta, n, r.mean_diff, r.std, r.t, r.p, False, "ok")


def min_delta_search(runs: dict, alpha: float = 0.01) -> tuple[float, list[DeltaRow]]:
    """Smallest delta whose projected/base difference is not significant at ``alpha``.

    ``runs`` maps each delta to its list of ``(projected, base)`` accuracy pairs.
    Returns the selected delta and the full table in ascending delta order.
    """
    table = []
    for delta in sorted(runs):
        pairs = runs[delta]
        if len(pairs) < 2:
            raise TooFewPairs(f"delta {delta} has {len(pairs)} pairs; need at least 2")
        row = sweep_row(delta, pairs)
        row.significant = row.p < alpha
        table.append(row)
    for row in table:
        if not row.significant:
            return row.delta, table
    raise NoQualifyingDelta(f"every delta differs significantly from the baseline at alpha={alpha}")


@dataclass(frozen=True)
class WidthAdvice:
    action: str
    factor: float
    mean_saturation: float


def _snap(ratio: float, grid) -> float:
    return min(grid, key=lambda g: (abs(math.log2(ratio) - math.log2(g)), g))


def width_advice(mean_saturation: float) -> WidthAdvice:
    """Suggest a width scale so that mean saturation lands in the 20-30 % range."""
    s = mean_saturation
    if not 0.0 < s <= 1.0:
        raise DomainError(f"mean saturation must lie in (0, 1], got {s}")
    lo, hi = SWEET_SPOT
    if s < lo:
        return WidthAdvice("shrink", _snap(s / SWEET_CENTRE, (1.0, 0.5, 0.25, 0.125)), s)
    if s > hi:
        return WidthAdvice("grow", _snap(s / SWEET_CENTRE, (1.0, 2.0, 4.0, 8.0)), s)
    return WidthAdvice("keep", 1.0, s)


def _average_ranks(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    values, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return (first + (counts + 1) / 2.0)[inverse]


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks for ties."""
    ra, rb = _average_ranks(a), _average_ranks(b)
    ra, rb = ra - ra.mean(), rb - rb.mean()
    denom = math.sqrt(float((ra * ra).sum() * (rb * rb).sum()))
    return float((ra * rb).sum() / denom) if denom > 0 else float("nan")
