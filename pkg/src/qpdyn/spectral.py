"""Lyapunov exponents and large-deviation measurements for transfer-matrix norms."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .discrepancy import IntervalUnionSet
from .operator import OperatorSpec, transfer_log_norms

__all__ = [
    "ThetaGrid",
    "LyapunovEstimate",
    "DeviationReport",
    "LDTScan",
    "lyapunov_estimate",
    "finite_scale_exponents",
    "deviation_measure",
    "ldt_scan",
    "deviation_set_intervals",
    "GridTooCoarseError",
    "LDT_CSV_COLUMNS",
]

_GOLDEN = (math.sqrt(5) - 1) / 2

LDT_CSV_COLUMNS = ("z_re", "z_im", "N", "mean_LN", "sup_LN", "fraction", "c2_fit")


class GridTooCoarseError(ValueError):
    """The theta grid cannot resolve the requested deviation-set measure."""


@dataclass(frozen=True)
class ThetaGrid:
    """Uniform phase grid ``(k + offset) / n``.

    ``kind="uniform"`` uses the midpoint offset 1/2.  ``kind="low_discrepancy"``
    rotates the whole grid by the golden mean, which keeps the samples off
    any rational structure tied to the frequency.
    """

    n: int
    kind: str = "uniform"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("theta grid needs at least one sample")
        if self.kind not in ("uniform", "low_discrepancy"):
            raise ValueError(f"unknown grid kind {self.kind!r}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def offset(self) -> float:
        return 0.5 if self.kind == "uniform" else _GOLDEN

    def points(self) -> np.ndarray:
        return np.mod((np.arange(self.n) + self.offset) / self.n, 1.0)


def _as_grid(theta_grid) -> ThetaGrid:
    if isinstance(theta_grid, ThetaGrid):
        return theta_grid
    return ThetaGrid(int(theta_grid))


def finite_scale_exponents(z: complex, spec: OperatorSpec, N: int, thetas: np.ndarray,
                           workers: int = 1) -> np.ndarray:
    """``(1/N) log ||M_N(theta)||`` for every phase, in input order."""
    if N < 1:
        raise ValueError("N must be >= 1")
    thetas = np.asarray(thetas, dtype=float)
    if workers <= 1 or thetas.size < 2 * workers:
        return transfer_log_norms(z, spec, thetas, N) / N
    chunks = np.array_split(thetas, workers)
    with ThreadPoolExecutor(workers) as ex:
        parts = list(ex.map(lambda c: transfer_log_norms(z, spec, c, N), chunks))
    return np.concatenate(parts) / N


@dataclass(frozen=True)
class LyapunovEstimate:
    z: complex
    N: int
    mean_LN: float
    sup_LN: float
    theta_samples: int
    grid_kind: str
    std_LN: float = 0.0

    def as_row(self) -> dict:
        d = asdict(self)
        d["z"] = [self.z.real, self.z.imag]
        return d


def lyapunov_estimate(z: complex, spec: OperatorSpec, N: int, theta_samples: int | ThetaGrid,
                      workers: int = 1) -> LyapunovEstimate:
    """Phase average and maximum of ``(1/N) log ||M_N||`` on a deterministic grid."""
    grid = _as_grid(theta_samples)
    vals = finite_scale_exponents(z, spec, N, grid.points(), workers)
    return LyapunovEstimate(complex(z), int(N), float(vals.mean()), float(vals.max()),
                            grid.n, grid.kind, float(vals.std()))


@dataclass
class DeviationReport:
    """Fraction of phases whose finite-scale exponent leaves the band ``kappa * L``.

    ``L_ref`` is the finite-scale mean at the calibration scale ``N_ref``
    and ``mean_LN`` the mean at scale N, which the deviations are measured
    from.  ``c2_fit`` and ``reference_decay`` are filled in by
    :func:`ldt_scan` once several scales are available.
    """

    z: complex
    N: int
    N_ref: int
    kappa: float
    measured_fraction: float
    mean_LN: float
    sup_LN: float
    L_ref: float
    applicable: bool = True
    c2_fit: float | None = None
    reference_decay: float | None = None
    violating: np.ndarray | None = field(default=None, repr=False)

    def csv_row(self) -> tuple:
        c2 = float("nan") if self.c2_fit is None else self.c2_fit
        return (self.z.real, self.z.imag, self.N, self.mean_LN, self.sup_LN,
                self.measured_fraction, c2)


def _reference_L(z, spec, N_ref, grid, workers) -> float:
    return lyapunov_estimate(z, spec, N_ref, grid, workers).mean_LN


def deviation_measure(z: complex, spec: OperatorSpec, N: int, theta_grid: int | ThetaGrid,
                      kappa: float = 0.01, N_ref: int | None = None, L_ref: float | None = None,
                      ref_samples: int | None = None, workers: int = 1) -> DeviationReport:
    """Measure ``leb{theta : |L_N(theta) - <L_N>| > kappa L}`` on a grid.

    Parameters
    ----------
    N_ref
        Calibration scale for ``L``; defaults to ``4 N``.  Ignored when
        ``L_ref`` is given directly.
    ref_samples
        Grid size for the calibration run (defaults to a tenth of the main
        grid, at least 64).
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    grid = _as_grid(theta_grid)
    N_ref = 4 * N if N_ref is None else int(N_ref)
    if N_ref < 4 * N and L_ref is None:
        raise ValueError("calibration scale must be at least 4 N")
    if L_ref is None:
        ref_grid = ThetaGrid(ref_samples or max(64, grid.n // 10), grid.kind)
        L_ref = _reference_L(z, spec, N_ref, ref_grid, workers)
    vals = finite_scale_exponents(z, spec, N, grid.points(), workers)
    mean = float(vals.mean())
    if not L_ref > 0:
        return DeviationReport(complex(z), N, N_ref, kappa, 0.0, mean, float(vals.max()),
                               float(L_ref), applicable=False)
    viol = np.abs(vals - mean) > kappa * L_ref
    return DeviationReport(complex(z), N, N_ref, kappa, float(viol.mean()), mean,
                           float(vals.max()), float(L_ref), True, violating=viol)


@dataclass
class LDTScan:
    """Deviation fractions over several scales with the fitted exponential rate.

    The model is ``fraction ~ A exp(-c2 L N)``; ``c2`` is the least-squares
    slope of ``-log(fraction)`` against ``L N`` over scales with a nonzero
    fraction.
    """

    reports: list[DeviationReport]
    c2_fit: float | None
    intercept: float | None
    r2: float | None

    @property
    def fractions(self) -> list[float]:
        return [r.measured_fraction for r in self.reports]

    @property
    def strictly_decreasing(self) -> bool:
        f = self.fractions
        return all(b < a for a, b in zip(f, f[1:]))

    def csv_rows(self) -> list[tuple]:
        return [r.csv_row() for r in self.reports]


def ldt_scan(z: complex, spec: OperatorSpec, Ns, theta_grid: int | ThetaGrid, kappa: float = 0.01,
             N_ref: int | None = None, ref_samples: int | None = None, workers: int = 1) -> LDTScan:
    """Run :func:`deviation_measure` for each scale with one shared ``L`` reference."""
    Ns = sorted(int(n) for n in Ns)
    grid = _as_grid(theta_grid)
    N_ref = 4 * Ns[-1] if N_ref is None else int(N_ref)
    if N_ref < 4 * Ns[-1]:
        raise ValueError("calibration scale must be at least 4 max(N)")
    ref_grid = ThetaGrid(ref_samples or max(64, grid.n // 10), grid.kind)
    L = _reference_L(z, spec, N_ref, ref_grid, workers)
    reports = [deviation_measure(z, spec, N, grid, kappa, N_ref=N_ref, L_ref=L, workers=workers)
               for N in Ns]
    for r in reports:
        r.N_ref = N_ref
    pts = [(r.N, r.measured_fraction) for r in reports if r.applicable and r.measured_fraction > 0]
    if L <= 0 or len(pts) < 2:
        return LDTScan(reports, None, None, None)
    x = np.array([L * n for n, _ in pts])
    y = np.log([f for _, f in pts])
    fit = stats.linregress(x, y)
    c2 = float(-fit.slope)
    for r in reports:
        r.c2_fit = c2
        r.reference_decay = math.exp(-c2 * L * r.N)
    return LDTScan(reports, c2, float(fit.intercept), float(fit.rvalue**2))


def deviation_set_intervals(z: complex, spec: OperatorSpec, N: int, theta_grid: int | ThetaGrid,
                            kappa: float = 0.01, target_measure: float | None = None,
                            report: DeviationReport | None = None, **kw) -> IntervalUnionSet:
    """Empirical deviation set as a union of closed arcs around violating samples.

    Each violating grid point contributes the arc of one grid spacing
    centred on it, so the measure is exactly ``count * spacing``.  With
    ``target_measure`` the grid must be fine enough that the spacing is at
    most a tenth of it.
    """
    grid = _as_grid(theta_grid)
    s = grid.spacing
    if target_measure is not None and s > target_measure / 10:
        raise GridTooCoarseError(f"spacing {s:.3g} exceeds target measure / 10")
    if report is None:
        report = deviation_measure(z, spec, N, grid, kappa, **kw)
    if not report.applicable or report.violating is None or not report.violating.any():
        return IntervalUnionSet([], 1)
    idx = np.flatnonzero(report.violating)
    # adjacent violating samples share endpoints; group consecutive runs
    # (including the wrap from the last sample to the first)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    ends = np.concatenate((idx[breaks], [idx[-1]]))
    if len(starts) > 1 and starts[0] == 0 and ends[-1] == grid.n - 1:
        starts[0] = starts[-1]
        starts, ends = starts[:-1], ends[:-1]
    pts = grid.points()
    arcs = [[float(pts[a] - s / 2), float(pts[b] + s / 2)] for a, b in zip(starts, ends)]
    if len(idx) == grid.n:
        arcs = [[0.0, 1.0]]
    return IntervalUnionSet(arcs, max(1, 2 * len(arcs)))
