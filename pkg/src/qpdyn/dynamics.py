"""Time evolution, time-averaged transport moments and the bound evaluators.

The time-averaged position distribution of ``psi(t) = exp(-itH) phi`` is

    a(n, T) = (2/T) int_0^inf exp(-2t/T) |psi(t)_n|^2 dt,

and ``<|X|^p>(T) = sum_n |n|^p a(n, T)``.  Two independent routes are
provided: a closed form from the eigendecomposition of the finite box, and
the resolvent integral ``a(n, T) = (1/(pi T)) int |((H - z)^{-1} phi)_n|^2 dE``
with ``z = E + i/T``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate, linalg, stats

from .green import UnconvergedError
from .operator import OperatorSpec, assemble_finite

__all__ = [
    "InitialState",
    "BoxTooSmallError",
    "BoxEigen",
    "ballistic_box",
    "evolve_state",
    "averaged_distribution",
    "moment_spectral",
    "moment_parseval",
    "ParsevalResult",
    "BoundParams",
    "bound_eval",
    "log_bound_eval",
    "GrowthFit",
    "growth_fit",
    "MomentCurve",
    "moment_curve",
    "MOMENT_CSV_COLUMNS",
]

MOMENT_CSV_COLUMNS = ("T", "p", "value_spectral", "value_parseval", "bound", "theorem_tag")

TAIL_GUARD = 1e-8


class BoxTooSmallError(RuntimeError):
    """Mass leaked into the outer tenth of the finite box."""


@dataclass(frozen=True)
class InitialState:
    """Finitely supported initial vector ``{site: amplitude}``."""

    support: Mapping[int, complex]
    normalized: bool = True

    def __post_init__(self):
        sup = {int(k): complex(v) for k, v in dict(self.support).items()}
        if not sup:
            raise ValueError("initial state needs nonempty support")
        if self.normalized:
            norm = math.sqrt(sum(abs(v) ** 2 for v in sup.values()))
            if abs(norm - 1) > 1e-12:
                raise ValueError(f"state norm {norm} != 1")
        object.__setattr__(self, "support", dict(sorted(sup.items())))

    @classmethod
    def delta(cls, site: int = 0) -> "InitialState":
        return cls({site: 1.0})

    @classmethod
    def normalize(cls, support: Mapping[int, complex]) -> "InitialState":
        norm = math.sqrt(sum(abs(complex(v)) ** 2 for v in support.values()))
        return cls({k: complex(v) / norm for k, v in support.items()})

    @property
    def sites(self) -> list[int]:
        return list(self.support)

    @property
    def diameter(self) -> int:
        return max(self.sites) - min(self.sites)

    @property
    def norm(self) -> float:
        return math.sqrt(sum(abs(v) ** 2 for v in self.support.values()))

    def vector(self, window: tuple[int, int]) -> np.ndarray:
        x1, x2 = window
        v = np.zeros(x2 - x1 + 1, dtype=complex)
        for k, a in self.support.items():
            if not x1 <= k <= x2:
                raise ValueError(f"site {k} outside the box {window}")
            v[k - x1] = a
        return v

    def to_json(self) -> dict:
        return {"support": [[k, v.real, v.imag] for k, v in self.support.items()],
                "normalized": self.normalized}

    @classmethod
    def from_json(cls, d: dict) -> "InitialState":
        return cls({int(k): complex(re, im) for k, re, im in d["support"]},
                   bool(d.get("normalized", True)))


def ballistic_box(spec: OperatorSpec, phi: InitialState, horizon: float, padding: int = 50) -> OperatorSpec:
    """Symmetric box with half-width ``2 ||H|| horizon + padding`` around the support."""
    reach = math.ceil(2 * (spec.K - 1) * horizon) + padding
    return spec.with_window(min(phi.sites) - reach, max(phi.sites) + reach)


class BoxEigen:
    """Eigendecomposition of a finite box, computed once and shared read-only."""

    def __init__(self, spec: OperatorSpec):
        self.spec = spec
        if spec.kernel is None and spec.hopping:
            d = spec.diagonal()
            off = np.ones(spec.size - 1)
            try:
                self.E, self.U = linalg.eigh_tridiagonal(d, off)
            except linalg.LinAlgError:
                # MRRR occasionally fails on near-degenerate clusters
                self.E, self.U = linalg.eigh_tridiagonal(d, off, lapack_driver="stev")
        else:
            self.E, self.U = linalg.eigh(assemble_finite(spec, check=False))
        self.sites = spec.sites

    def weights(self, p: float) -> np.ndarray:
        return np.where(self.sites == 0, 0.0, np.abs(self.sites).astype(float) ** p)


def _tail_mass(dist: np.ndarray, sites: np.ndarray, window: tuple[int, int]) -> float:
    x1, x2 = window
    centre, half = (x1 + x2) / 2, (x2 - x1) / 2
    outer = np.abs(sites - centre) > 0.9 * half
    return float(np.abs(dist[outer]).sum())


def evolve_state(spec: OperatorSpec, phi: InitialState, t: float, eig: BoxEigen | None = None,
                 guard: float | None = TAIL_GUARD) -> np.ndarray:
    """``exp(-itH) phi`` on the box ``spec.window``.

    Raises :class:`BoxTooSmallError` when more than ``guard`` of the
    probability sits in the outer tenth of the box (``guard=None`` skips the
    check).
    """
    eig = eig or BoxEigen(spec)
    v = phi.vector(spec.window)
    psi = eig.U @ (np.exp(-1j * t * eig.E) * (eig.U.T @ v))
    if guard is not None:
        tail = _tail_mass(np.abs(psi) ** 2, eig.sites, spec.window)
        if tail > guard:
            raise BoxTooSmallError(f"tail mass {tail:.2e} at t={t}")
    return psi


def averaged_distribution(spec: OperatorSpec, phi: InitialState, T: float, eig: BoxEigen | None = None,
                          guard: float | None = TAIL_GUARD) -> np.ndarray:
    """``a(n, T)`` for every site of the box, by the eigenbasis closed form.

    With ``c = U^T phi`` and ``W_kl = (2/T) / ((2/T) + i (E_k - E_l))``,
    ``a(n, T) = sum_kl U_nk W_kl c_k conj(c_l) U_nl``.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    eig = eig or BoxEigen(spec)
    c = eig.U.T @ phi.vector(spec.window)
    g = 2.0 / T
    W = g / (g + 1j * (eig.E[:, None] - eig.E[None, :]))
    B = W * np.outer(c, c.conj())
    a = np.einsum("nk,kl,nl->n", eig.U, B, eig.U, optimize=True).real
    if guard is not None:
        tail = _tail_mass(a, eig.sites, spec.window)
        if tail > guard:
            raise BoxTooSmallError(f"time-averaged tail mass {tail:.2e} at T={T}")
    return a


def moment_spectral(spec: OperatorSpec, phi: InitialState, p: float, T: float,
                    eig: BoxEigen | None = None, guard: float | None = TAIL_GUARD) -> float:
    """``<|X|^p>(T)`` from the eigendecomposition of the box."""
    if p <= 0:
        raise ValueError("moment order p must be positive")
    eig = eig or BoxEigen(spec)
    a = averaged_distribution(spec, phi, T, eig, guard)
    return float(np.dot(eig.weights(p), a))


@dataclass(frozen=True)
class ParsevalResult:
    value: float
    error: float
    normalization: float


def moment_parseval(spec: OperatorSpec, phi: InitialState, p: float, T: float,
                    E_grid: Sequence[float] | None = None, rtol: float = 1e-2,
                    eig: BoxEigen | None = None) -> ParsevalResult:
    """``<|X|^p>(T)`` from the resolvent integral over the whole real axis.

    The integrand ``[sum |n|^p |x_n|^2, sum |x_n|^2]`` with ``x = (H - z)^{-1} phi``
    is integrated adaptively on ``[-K, K]`` with ``E_grid`` (default: the box
    eigenvalues) as breakpoints, since it has Lorentzian spikes of width
    ``1/T`` there, and on the two half-lines outside.  The second component
    is the normalisation ``sum_n a(n, T)``, which must come out as the norm
    squared of ``phi``.
    """
    if p <= 0:
        raise ValueError("moment order p must be positive")
    if not (spec.kernel is None and spec.hopping):
        raise ValueError("resolvent route implemented for nearest-neighbour boxes")
    K = spec.K
    if E_grid is None:
        eig = eig or BoxEigen(spec)
        E_grid = eig.E
    pts = sorted(float(e) for e in E_grid if -K < e < K)
    sites = spec.sites
    w = np.where(sites == 0, 0.0, np.abs(sites).astype(float) ** p)
    v = phi.vector(spec.window)
    ab = np.zeros((3, spec.size), dtype=complex)
    ab[0, 1:] = 1.0
    ab[2, :-1] = 1.0
    diag = spec.diagonal()
    eta = 1.0 / T

    def f(E):
        ab[1] = diag - (E + 1j * eta)
        x = linalg.solve_banded((1, 1), ab, v, check_finite=False)
        m = np.abs(x) ** 2
        return np.array([w @ m, m.sum()])

    inner, e_in = integrate.quad_vec(f, -K, K, points=pts, epsrel=1e-10, epsabs=0, limit=20000)
    left, e_l = integrate.quad_vec(f, -np.inf, -K, epsrel=1e-10, epsabs=0)
    right, e_r = integrate.quad_vec(f, K, np.inf, epsrel=1e-10, epsabs=0)
    scale = 1.0 / (math.pi * T)
    total = (inner + left + right) * scale
    err = (e_in + e_l + e_r) * scale
    # a moment of exactly zero (state never leaves the origin) is judged against the mass
    if err > rtol * max(abs(total[0]), abs(total[1])):
        raise UnconvergedError(f"quadrature error {err:.2e} vs value {total[0]:.3e}")
    return ParsevalResult(float(total[0]), float(err), float(total[1]))


# ---------------------------------------------------------------------------
# Bound evaluators
# ---------------------------------------------------------------------------

THEOREMS = ("qdDC", "qdWDC", "qdLiou", "generic", "generic_ca1", "generic_ca2", "generic_ca3")
PSI_FORMS = ("power", "exp_log_power", "log_power")


@dataclass(frozen=True)
class BoundParams:
    """Parameters of one transport bound.

    ``C0`` defaults to ``5 C`` with covering exponent ``C = 1``.  For the
    generic bound ``[Gamma((80/c2) log T)]^p``, ``psi_form`` selects ``Psi``
    and hence its inverse ``Gamma``:

    ``power``          Psi(N) = N^delta,                 Gamma(y) = y^(1/delta)
    ``exp_log_power``  Psi(N) = exp(delta (log N)^sigma), Gamma(y) = exp((log y / delta)^(1/sigma))
    ``log_power``      Psi(N) = (log N)^(1/delta),       Gamma(y) = exp(y^delta)
    """

    theorem: str
    p: float = 2.0
    C0: float = 5.0
    c2: float | None = None
    gamma: float | None = None
    kappa: float | None = None
    eta: float | None = None
    epsilon: float = 0.0
    delta: float | None = None
    sigma: float | None = None
    psi_form: str = "power"

    def __post_init__(self):
        t = self.theorem
        if t not in THEOREMS:
            raise ValueError(f"unknown theorem tag {t!r}")
        if self.p <= 0 or self.epsilon < 0 or self.C0 <= 0:
            raise ValueError("need p > 0, epsilon >= 0, C0 > 0")

        def need(*names):
            for n in names:
                if getattr(self, n) is None:
                    raise ValueError(f"{t} needs parameter {n}")

        if t == "qdDC":
            need("gamma")
            if self.gamma < 1:
                raise ValueError("qdDC needs gamma >= 1")
        elif t == "qdWDC":
            need("gamma", "kappa")
            if not self.gamma > 1 or not self.kappa > 0:
                raise ValueError("qdWDC needs gamma > 1 and kappa > 0")
        elif t == "qdLiou":
            need("gamma")
            if not 0 < self.gamma < 1 / self.C0:
                raise ValueError("qdLiou needs 0 < gamma < 1/C0")
        elif t == "generic":
            need("c2", "delta")
            if self.psi_form not in PSI_FORMS:
                raise ValueError(f"unknown psi form {self.psi_form!r}")
            if self.psi_form == "exp_log_power":
                need("sigma")
        elif t == "generic_ca1":
            need("delta")
        elif t == "generic_ca2":
            need("delta", "sigma")
        elif t == "generic_ca3":
            need("delta")
        if self.delta is not None and self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.c2 is not None and self.c2 <= 0:
            raise ValueError("c2 must be positive")

    def to_json(self) -> dict:
        return asdict(self)


def log_bound_eval(params: BoundParams, T: float) -> float:
    """Natural log of :func:`bound_eval`; avoids overflow for the fast-growing forms."""
    if T <= math.e:
        raise ValueError("bounds are evaluated for T > e")
    P = params
    lt = math.log(T)
    llt = math.log(lt)
    t = P.theorem
    if t == "qdDC":
        return (P.p * P.C0 * P.gamma + P.epsilon) * llt
    if t == "qdWDC":
        return P.p * P.kappa * (P.C0 + P.epsilon) ** P.gamma * llt ** P.gamma
    if t == "qdLiou":
        return P.p * lt ** (P.C0 * P.gamma + P.epsilon)
    if t == "generic_ca1":
        return (P.p / P.delta + P.epsilon) * llt
    if t == "generic_ca2":
        return P.p * ((1 + P.epsilon) / P.delta * llt) ** (1 / P.sigma)
    if t == "generic_ca3":
        return P.p * lt ** (P.delta + P.epsilon)
    # generic: p log Gamma(y), y = (80/c2) log T
    y = 80.0 / P.c2 * lt
    if P.psi_form == "power":
        return P.p * math.log(y) / P.delta
    if P.psi_form == "exp_log_power":
        return P.p * (max(math.log(y), 0.0) / P.delta) ** (1 / P.sigma)
    return P.p * y ** P.delta


def bound_eval(params: BoundParams, T: float) -> float:
    """Value of the selected transport bound at time scale ``T`` (may be ``inf``)."""
    lg = log_bound_eval(params, T)
    return math.exp(lg) if lg < 709 else math.inf


# ---------------------------------------------------------------------------
# Growth fits and moment curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthFit:
    scale_kind: str
    exponent: float
    r2: float
    degenerate: bool = False


def _scale(T: np.ndarray, kind: str) -> np.ndarray:
    if kind == "logT":
        return np.log(T)
    if kind in ("loglogT", "logT_power"):
        return np.log(np.log(T))
    raise ValueError(f"unknown scale kind {kind!r}")


def growth_fit(T_grid: Sequence[float], values: Sequence[float], scale_kind: str = "loglogT",
               min_samples: int = 6, min_decades: float = 2.0) -> GrowthFit:
    """Least-squares growth exponent of a moment curve.

    ``logT``: slope of ``log v`` against ``log T`` (power law).
    ``loglogT``: slope of ``log v`` against ``log log T`` (polylogarithmic).
    ``logT_power``: slope of ``log log v`` against ``log log T``, the
    exponent ``s`` in ``v ~ exp((log T)^s)``.
    """
    T = np.asarray(T_grid, dtype=float)
    v = np.asarray(values, dtype=float)
    if T.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples")
    if math.log10(T.max() / T.min()) < min_decades - 1e-12:
        raise ValueError(f"T grid must span {min_decades} decades")
    if np.any(T <= math.e) and scale_kind != "logT":
        raise ValueError("log log T scale needs T > e")
    if np.any(v <= 0):
        raise ValueError("values must be positive for a log fit")
    if np.ptp(v) <= 1e-12 * np.abs(v).max():
        return GrowthFit(scale_kind, 0.0, 1.0, degenerate=True)
    x = _scale(T, scale_kind)
    y = np.log(v)
    if scale_kind == "logT_power":
        if np.any(y <= 0):
            raise ValueError("logT_power fit needs values > 1")
        y = np.log(y)
    fit = stats.linregress(x, y)
    return GrowthFit(scale_kind, float(fit.slope), float(fit.rvalue**2))


@dataclass
class MomentCurve:
    p: float
    T_grid: list[float]
    values_spectral: list[float]
    values_parseval: list[float] | None = None
    parseval_errors: list[float] | None = None
    bound_values: dict[str, list[float]] = field(default_factory=dict)
    fit: GrowthFit | None = None

    def ratios(self, tag: str) -> list[float]:
        return [v / b for v, b in zip(self.values_spectral, self.bound_values[tag])]

    def calibration_constant(self, tag: str) -> float:
        """Smallest C with ``value <= C * bound`` on the whole grid."""
        return max(self.ratios(tag))

    def csv_rows(self) -> list[tuple]:
        rows = []
        tags = list(self.bound_values) or [""]
        for i, T in enumerate(self.T_grid):
            vp = self.values_parseval[i] if self.values_parseval else float("nan")
            for tag in tags:
                b = self.bound_values[tag][i] if tag else float("nan")
                rows.append((T, self.p, self.values_spectral[i], vp, b, tag))
        return rows


def moment_curve(spec: OperatorSpec, phi: InitialState, p: float, T_grid: Sequence[float],
                 bounds: Sequence[BoundParams] = (), parseval: bool = False,
                 guard: float | None = TAIL_GUARD, fit_kind: str | None = "loglogT") -> MomentCurve:
    """Moments over a T grid with one shared eigendecomposition."""
    eig = BoxEigen(spec)
    T_grid = [float(t) for t in T_grid]
    vals = [moment_spectral(spec, phi, p, T, eig, guard) for T in T_grid]
    curve = MomentCurve(p, T_grid, vals)
    if parseval:
        res = [moment_parseval(spec, phi, p, T, eig=eig) for T in T_grid]
        curve.values_parseval = [r.value for r in res]
        curve.parseval_errors = [r.error for r in res]
    for b in bounds:
        curve.bound_values[b.theorem] = [bound_eval(b, T) for T in T_grid]
    if fit_kind is not None:
        try:
            curve.fit = growth_fit(T_grid, vals, fit_kind)
        except ValueError:
            curve.fit = None
    return curve
