"""Discrepancy of Kronecker orbits and the bounds that control it.

Exact one-dimensional discrepancy over closed torus arcs, the
Erdos-Turan-Koksma upper bound, the Phi-parametrised three-term bound with
its per-condition choices of the cutoff M, hitting counts of interval-union
sets, and the dyadic-box band count behind the pigeonhole argument.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .arithmetic import DiophantineCondition, FrequencyProfile, torus_norm

__all__ = [
    "PointSet",
    "IntervalUnionSet",
    "DiscrepancyReport",
    "HittingReport",
    "kronecker_orbit",
    "exact_discrepancy",
    "etk_bound",
    "dks_bound",
    "choose_M",
    "corollary_bound",
    "discrepancy_report",
    "hitting_count",
    "fixed_points_check",
    "EnumerationBudgetError",
]


class EnumerationBudgetError(RuntimeError):
    """Refusal to enumerate a dyadic box that is too large."""


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray  # shape (N, d), coordinates in [0, 1)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] < 1:
            raise ValueError("empty point set")
        if np.any(pts < 0) or np.any(pts >= 1):
            raise ValueError("coordinates must lie in [0, 1)")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


def _indices(N: int, index_range: str) -> np.ndarray:
    if N < 1:
        raise ValueError("N must be >= 1")
    if index_range in ("1..N", "positive"):
        return np.arange(1, N + 1, dtype=np.int64)
    if index_range in ("-N..N", "symmetric"):
        return np.arange(-N, N + 1, dtype=np.int64)
    raise ValueError(f"unknown index range {index_range!r}")


def _orbit_1d(theta: float, alpha, n: np.ndarray) -> np.ndarray:
    if isinstance(alpha, FrequencyProfile):
        x = np.mod(alpha.frac_multiples(n) + theta, 1.0)
    else:
        x = np.mod(theta + n * float(alpha), 1.0)
    # mod can return 1.0 for tiny negatives
    x[x >= 1.0] = 0.0
    return x


def kronecker_orbit(theta, alpha, N: int, index_range: str = "1..N") -> PointSet:
    """Points ``theta + n alpha mod 1`` in index order.

    ``alpha`` may be a float, a d-vector, a :class:`FrequencyProfile`, or a
    sequence of profiles.  Rational alpha is allowed here.
    """
    n = _indices(N, index_range)
    if isinstance(alpha, FrequencyProfile) or np.ndim(alpha) == 0:
        pts = _orbit_1d(float(np.ravel(theta)[0]) if np.ndim(theta) else float(theta), alpha, n)[:, None]
    else:
        theta = np.broadcast_to(np.asarray(theta, dtype=float), (len(alpha),))
        pts = np.stack([_orbit_1d(t, a, n) for t, a in zip(theta, alpha)], axis=1)
    return PointSet(pts, {"kind": "kronecker", "N": N, "index_range": index_range})


def exact_discrepancy(ps: PointSet, grid: int = 64) -> float:
    """Sup over closed torus arcs of ``|#{x_n in I}/N - |I||``.

    For d = 1 the sup is attained on arcs whose endpoints are data points
    (degenerate single-point arcs included), which collapses to
    ``1/N + max_i u_i - min_i u_i`` with ``u_i = x_(i) - i/N`` over the
    sorted sample.  For d = 2 boxes with corners on a ``grid x grid`` lattice
    are scanned; that is an approximation with resolution ``1/grid``.
    """
    if len(ps) == 0:
        raise ValueError("empty point set")
    if ps.dim == 1:
        x = np.sort(ps.points[:, 0])
        N = x.size
        u = x - np.arange(N) / N
        return float(min(1.0, 1.0 / N + u.max() - u.min()))
    if ps.dim == 2:
        return _grid_discrepancy_2d(ps.points, grid)
    raise ValueError("discrepancy for d >= 3 is not supported")


def _grid_discrepancy_2d(pts: np.ndarray, g: int) -> float:
    N = pts.shape[0]
    cells = np.minimum((pts * g).astype(int), g - 1)
    hist = np.zeros((g, g))
    np.add.at(hist, (cells[:, 0], cells[:, 1]), 1.0)
    # doubled histogram makes wrap-around boxes contiguous
    big = np.tile(hist, (2, 2))
    cs = np.zeros((2 * g + 1, 2 * g + 1))
    cs[1:, 1:] = big.cumsum(0).cumsum(1)
    best = 0.0
    for a in range(g):
        for la in range(1, g + 1):
            rows = cs[a + la] - cs[a]
            for b in range(g):
                cnt = rows[b + 1:b + g + 1] - rows[b]
                area = la * np.arange(1, g + 1) / (g * g)
                best = max(best, float(np.abs(cnt / N - area).max()))
    return best


def _exp_sum_abs(x: np.ndarray, N: int, cutoff: str) -> np.ndarray:
    """``|sum_{n=1}^N e^{2 pi i n x}|`` in closed form or the min{N, 1/(2||x||)} majorant."""
    nx = torus_norm(x)
    nx = np.atleast_1d(nx)
    out = np.full(nx.shape, float(N))
    nz = nx > 0
    if cutoff == "exact":
        out[nz] = np.abs(np.sin(np.pi * N * nx[nz]) / np.sin(np.pi * nx[nz]))
    elif cutoff == "min":
        out[nz] = np.minimum(N, 1.0 / (2.0 * nx[nz]))
    else:
        raise ValueError(f"unknown cutoff {cutoff!r}")
    return out


def etk_bound(alpha, N: int, M: int, cutoff: str = "exact") -> float:
    """Erdos-Turan-Koksma right-hand side for the orbit ``n alpha``, n = 1..N.

    ``(3/2)^d (2/(M+1) + sum_{0<|m|<M} r(m)^{-1} |N^{-1} sum_n e(<m, x_n>)|)``
    with ``r(m) = prod max(1, |m_i|)`` and ``|m|`` the max-norm.  The
    exponential sums are independent of the starting phase.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if isinstance(alpha, FrequencyProfile):
        alpha = [alpha.alpha]
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    d = alpha.size
    total = 0.0
    if M > 1:
        rng = np.arange(-(M - 1), M)
        if d == 1:
            m = rng[rng != 0].astype(float)
            x = m * alpha[0]
            r = np.abs(m)
            total = float(np.sum(_exp_sum_abs(x, N, cutoff) / (N * r)))
        else:
            grids = np.meshgrid(*([rng] * d), indexing="ij")
            m = np.stack([gr.ravel() for gr in grids], axis=1)
            m = m[np.any(m != 0, axis=1)]
            x = m @ alpha
            r = np.prod(np.maximum(1, np.abs(m)), axis=1)
            total = float(np.sum(_exp_sum_abs(x, N, cutoff) / (N * r)))
    return 1.5**d * (2.0 / (M + 1) + total)


def choose_M(cond: DiophantineCondition, N: float) -> float:
    """Cutoff used by the corollaries: Phi(M) = N, or Phi(M) = sqrt(N) for the stretched form."""
    target = math.sqrt(N) if cond.form == "stretched_exp" else float(N)
    return cond.inverse_phi(target)


def dks_bound(cond: DiophantineCondition, N: int, M: float | None = None, *,
              d: int = 1, constant: float = 1.0) -> float:
    """``C (1/M + 1/N + Phi(M) log Phi(M) (log M)^d / (M N))``.

    The implicit constant is exposed as ``constant``.  ``M`` defaults to
    :func:`choose_M`; the bound is only claimed for ``M >= rho``.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    if M is None:
        M = choose_M(cond, N)
    if M < cond.rho:
        raise ValueError(f"M={M:.6g} is below the monotonicity threshold rho={cond.rho:.6g}")
    lphi = float(cond.log_phi(M))
    third = math.exp(lphi - math.log(M) - math.log(N)) * lphi * math.log(M) ** d
    return constant * (1.0 / M + 1.0 / N + third)


def corollary_bound(cond: DiophantineCondition, N: float, d: int = 1) -> float:
    """Closed-form decay rate for each condition form (constant 1).

    power: ``N^{-1/gamma} (log N)^{d+1}``;
    log_power: ``(log N)^{1+d/gamma} exp(-(log N / kappa)^{1/gamma})``;
    stretched_exp: ``(log N)^{-1/gamma}``.
    """
    lN = math.log(N)
    g = cond.gamma
    if cond.form == "power":
        return N ** (-1.0 / g) * lN ** (d + 1)
    if cond.form == "log_power":
        return lN ** (1 + d / g) * math.exp(-((lN / cond.kappa) ** (1.0 / g)))
    return lN ** (-1.0 / g)


@dataclass(frozen=True)
class DiscrepancyReport:
    N: int
    exact: float
    etk_bound: float
    dks_bound: float | None
    M_used: int
    corollary_bound: float | None

    def row(self) -> tuple:
        return (self.N, self.exact, self.etk_bound, self.dks_bound, self.corollary_bound, self.M_used)


CSV_COLUMNS = ("N", "exact", "etk", "dks", "corollary_bound", "M_used")


def discrepancy_report(profile: FrequencyProfile, N: int, M: int | None = None,
                       cond: DiophantineCondition | None = None,
                       dks_constant: float = 1.0) -> DiscrepancyReport:
    """Exact discrepancy of ``{n alpha}``, n = 1..N, next to its upper bounds.

    ``M`` for the ETK bound defaults to the corollary choice (rounded, at
    least 1).  The Phi-bound is ``None`` when that choice falls below rho.
    """
    cond = cond or profile.condition
    ex = exact_discrepancy(kronecker_orbit(0.0, profile, N))
    dks = cor = None
    M_cor = None
    if cond is not None:
        try:
            M_cor = choose_M(cond, N)
            dks = dks_bound(cond, N, M_cor, constant=dks_constant)
        except ValueError:
            dks = None
        cor = corollary_bound(cond, N)
    if M is None:
        M = max(1, int(round(M_cor))) if M_cor and M_cor >= 1 else 1
    M = int(min(M, 10**6))
    etk = etk_bound(profile.alpha, N, M)
    return DiscrepancyReport(N, ex, etk, dks, M, cor)


# ---------------------------------------------------------------------------
# Interval unions and hitting counts
# ---------------------------------------------------------------------------

class IntervalUnionSet:
    """Finite union of closed arcs of the torus with a declared degree.

    Arcs ``[a, b]`` with ``a > b`` wrap through 0.  After normalisation the
    pieces are disjoint sub-intervals of [0, 1]; an arc crossing 0 is stored
    as two pieces but counted as one component.
    """

    def __init__(self, arcs: Sequence[Sequence[float]] = (), degree: int | None = None):
        pieces = []
        for a, b in arcs:
            a, b = float(a), float(b)
            length = b - a if b >= a else (b - a) % 1.0
            if length >= 1.0:
                pieces.append((0.0, 1.0))
                continue
            a0 = a % 1.0
            end = a0 + length
            if end <= 1.0:
                pieces.append((a0, end))
            else:
                pieces.append((a0, 1.0))
                pieces.append((0.0, end - 1.0))
        pieces.sort()
        merged: list[list[float]] = []
        for a, b in pieces:
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        self._lo = np.array([p[0] for p in merged])
        self._hi = np.array([p[1] for p in merged])
        ncomp = len(merged)
        if ncomp >= 2 and merged[0][0] == 0.0 and merged[-1][1] == 1.0:
            ncomp -= 1
        self.n_components = ncomp
        self.measure = float(np.sum(self._hi - self._lo))
        min_degree = max(1, 2 * ncomp)
        if degree is None:
            degree = min_degree
        if degree < min_degree:
            raise ValueError(f"declared degree {degree} < 2 x components ({min_degree})")
        self.degree = int(degree)

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return list(zip(self._lo.tolist(), self._hi.tolist()))

    def contains(self, x) -> np.ndarray:
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        if self._lo.size == 0:
            return np.zeros(x.shape, dtype=bool)
        i = np.searchsorted(self._lo, x, side="right") - 1
        ok = i >= 0
        res = np.zeros(x.shape, dtype=bool)
        res[ok] = x[ok] <= self._hi[i[ok]]
        return res

    def to_json(self) -> dict:
        return {"arcs": [list(p) for p in self.intervals], "degree": self.degree}

    @classmethod
    def from_json(cls, d: dict) -> "IntervalUnionSet":
        return cls(d.get("arcs", []), d.get("degree"))

    def __repr__(self):
        return f"IntervalUnionSet({self.intervals!r}, degree={self.degree})"


@dataclass(frozen=True)
class HittingReport:
    count: int
    n_points: int
    bound: float | None
    applicable: bool
    note: str = ""


def hitting_count(theta: float, profile, N: int, S: IntervalUnionSet,
                  index_range: str = "1..N", Y_N: float | None = None,
                  covering_exponent: float = 1.0) -> HittingReport:
    """Count orbit points in ``S`` and compare with ``2 B^C n Y_N``.

    ``Y_N`` is a supplied discrepancy majorant; when omitted the exact
    discrepancy of the enumerated orbit is used.  If ``S.measure > Y_N`` the
    covering bound does not apply: the count is still returned and
    ``bound`` is ``None``.
    """
    ps = kronecker_orbit(theta, profile, N, index_range)
    x = ps.points[:, 0]
    count = int(np.count_nonzero(S.contains(x)))
    if Y_N is None:
        Y_N = exact_discrepancy(ps)
    if S.measure > Y_N:
        return HittingReport(count, len(ps), None, False,
                             f"measure {S.measure:.3g} exceeds Y_N {Y_N:.3g}")
    bound = 2.0 * S.degree**covering_exponent * len(ps) * Y_N
    return HittingReport(count, len(ps), bound, True)


def fixed_points_check(alpha, cond: DiophantineCondition, r: Sequence[int] | int,
                       l: int | None = None, budget: int = 2_000_000) -> int:
    """Count points of the dyadic box ``T_r`` in a band of ``||<m, alpha>||``.

    ``T_r = {m : 2^{r_i - 1} <= |m_i| <= 2^{r_i}}`` and the band is
    ``l/Delta <= ||<m, alpha>|| <= (l+1)/Delta`` with
    ``Delta = Phi(2^{max r})``.  With ``l=None`` the maximum over all bands
    ``0 <= l <= floor(Delta)`` is returned.
    """
    r = [int(r)] if np.ndim(r) == 0 else [int(v) for v in r]
    if isinstance(alpha, FrequencyProfile):
        alpha = [alpha]
    alpha = list(alpha) if np.ndim(alpha) or isinstance(alpha, list) else [alpha]
    if len(alpha) != len(r):
        raise ValueError("alpha and r must have the same dimension")
    axes = []
    for ri in r:
        mags = np.arange(2 ** (ri - 1), 2**ri + 1, dtype=np.int64)
        axes.append(np.concatenate([-mags[::-1], mags]))
    size = math.prod(len(a) for a in axes)
    if size > budget:
        raise EnumerationBudgetError(f"|T_r| = {size} exceeds budget {budget}")
    delta = float(cond.phi(2.0 ** max(r)))
    vals = _inner_norms(alpha, axes)
    lo = vals * delta
    if l is not None:
        return int(np.count_nonzero((lo >= l) & (lo <= l + 1)))
    # a value on a band edge belongs to both neighbouring bands
    top = int(math.floor(delta))
    hi_band = np.floor(lo).astype(np.int64)
    on_edge = (lo == hi_band) & (hi_band > 0)
    counts = np.bincount(np.clip(hi_band, 0, top + 1), minlength=top + 2)
    counts = counts + np.bincount(np.clip(hi_band[on_edge] - 1, 0, top + 1), minlength=top + 2)
    return int(counts[: top + 1].max()) if top >= 0 else 0


def _inner_norms(alpha, axes) -> np.ndarray:
    if len(axes) == 1:
        a = alpha[0]
        m = axes[0]
        if isinstance(a, FrequencyProfile):
            return a.norm_multiples(m)
        return torus_norm(m * float(a))
    frac = []
    for a, m in zip(alpha, axes):
        frac.append(a.frac_multiples(m) if isinstance(a, FrequencyProfile) else np.mod(m * float(a), 1.0))
    total = np.zeros(())
    for k, f in enumerate(frac):
        shape = [1] * len(frac)
        shape[k] = -1
        total = total + f.reshape(shape)
    return torus_norm(total.ravel())


def orbit_discrepancy_curve(profile: FrequencyProfile, Ns: Sequence[int]) -> list[float]:
    """Exact discrepancies of the orbit prefix for each N (one orbit evaluated)."""
    Nmax = max(Ns)
    x = kronecker_orbit(0.0, profile, Nmax).points[:, 0]
    return [exact_discrepancy(PointSet(x[:N])) for N in Ns]

