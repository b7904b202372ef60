"""Finite-box Green's functions, the Cramer bound and the good-box scanner.

``G_L(z) = (R_L H R_L - z)^{-1}``.  For nearest-neighbour hopping,

    G(m, n) = -P_{m-x1}(theta + x1 alpha) P_{x2-n}(theta + (n+1) alpha)
              / P_{|L|}(theta + x1 alpha),            m <= n,

with ``P_k = det(z - H_k)`` as in :mod:`qpdyn.operator`.  Each factor of
the numerator is an entry of a transfer matrix, which gives the bound

    |G(m, n)| <= ||M_[x1, m-1]|| ||M_[n+1, x2]|| / |det(H_L - z)|.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, stats

from .operator import OperatorSpec, assemble_finite, char_poly_det, transfer_product

__all__ = [
    "NearSpectrumError",
    "UnconvergedError",
    "GeometryError",
    "green_direct",
    "green_column",
    "green_entry_cramer",
    "z_grid",
    "GreenBoxReport",
    "good_box_scan",
    "box_margin",
    "full_line_entry_check",
    "decay_rate_fit",
    "window_bounds",
]


class NearSpectrumError(ArithmeticError):
    """z is numerically on the spectrum of the finite box."""


class UnconvergedError(ArithmeticError):
    """A finite-box surrogate for the full line did not converge."""


class GeometryError(ValueError):
    """Requested interval length does not fit the search window."""


_DENSE_LIMIT = 64


def _banded(spec: OperatorSpec, z: complex) -> np.ndarray:
    n = spec.size
    ab = np.zeros((3, n), dtype=complex)
    ab[0, 1:] = 1.0
    ab[1] = spec.diagonal() - z
    ab[2, :-1] = 1.0
    return ab


def green_direct(spec: OperatorSpec, z: complex, tol: float = 1e-9) -> np.ndarray:
    """Resolvent of the finite box by a direct solve.

    Boxes up to 64 sites use a dense inverse; larger nearest-neighbour boxes
    use a banded solve with the identity as right-hand side.  The residual
    ``max |(H - z) G - I|`` is checked against ``tol`` scaled by ``||G||``
    so that near-spectrum energies are reported rather than silently
    returning garbage.
    """
    H = assemble_finite(spec, check=False)
    A = H - z * np.eye(spec.size)
    try:
        if spec.size <= _DENSE_LIMIT or not spec.nearest_neighbour:
            G = linalg.inv(A, check_finite=False)
        else:
            G = linalg.solve_banded((1, 1), _banded(spec, z), np.eye(spec.size, dtype=complex),
                                    check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NearSpectrumError(f"box resolvent singular at z={z}") from exc
    if not np.all(np.isfinite(G)):
        raise NearSpectrumError(f"box resolvent singular at z={z}")
    res = np.abs(A @ G - np.eye(spec.size)).max()
    if res > tol * max(1.0, np.abs(G).max()):
        raise NearSpectrumError(f"resolvent residual {res:.2e} at z={z}")
    return G


def green_column(spec: OperatorSpec, z: complex, n: int) -> np.ndarray:
    """Column ``G(., n)`` of a nearest-neighbour box (site label n, not index)."""
    x1, x2 = spec.window
    if not x1 <= n <= x2:
        raise ValueError("site outside the box")
    rhs = np.zeros(spec.size, dtype=complex)
    rhs[n - x1] = 1.0
    return linalg.solve_banded((1, 1), _banded(spec, z), rhs, check_finite=False)


@dataclass(frozen=True)
class CramerEntry:
    exact: complex
    bound: float
    log_abs: float
    log_bound: float


def green_entry_cramer(spec: OperatorSpec, z: complex, m: int, n: int) -> CramerEntry:
    """Entry ``G(m, n)`` from characteristic determinants and its transfer-norm bound.

    Sites are labels inside ``spec.window``.  ``m > n`` is handled by the
    symmetry ``G(m, n) = G(n, m)`` of a real-symmetric box.
    """
    if not spec.nearest_neighbour:
        raise ValueError("Cramer form needs a nearest-neighbour operator")
    x1, x2 = spec.window
    if m > n:
        m, n = n, m
    if not x1 <= m <= n <= x2:
        raise ValueError("need x1 <= m, n <= x2")
    left, sl = char_poly_det(z, spec, x1, m - 1)
    right, sr = char_poly_det(z, spec, n + 1, x2)
    full, sf = char_poly_det(z, spec, x1, x2)
    if full == 0:
        raise NearSpectrumError(f"z={z} is an eigenvalue of the box")
    mant = -left * right / full
    log_scale = sl + sr - sf
    log_abs = math.log(abs(mant)) + log_scale if mant != 0 else -math.inf
    exact = complex(mant) * cmath.exp(log_scale) if log_scale < 700 else complex(math.inf)

    def log_tnorm(a, b):
        if b < a:
            return 0.0
        return transfer_product(z, spec, (a, b)).log_opnorm()

    log_bound = log_tnorm(x1, m - 1) + log_tnorm(n + 1, x2) - (math.log(abs(full)) + sf)
    return CramerEntry(exact, math.exp(min(log_bound, 700.0)), log_abs, log_bound)


def z_grid(K: float, n: int, eps: float) -> np.ndarray:
    """``n`` energies uniform over ``[-K, K]`` shifted by ``i eps``."""
    if n < 1 or eps <= 0:
        raise ValueError("need n >= 1 and eps > 0")
    E = np.linspace(-K, K, n) if n > 1 else np.array([0.0])
    return E + 1j * eps


def window_bounds(N: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """Right ``[N/4, N/2]`` and left ``[-N/2, -N/4]`` windows rounded inward."""
    if N < 64:
        raise GeometryError("windows degenerate below N = 64")
    lo, hi = -(-N // 4), N // 2
    return (lo, hi), (-hi, -lo)


def box_margin(spec: OperatorSpec, zs: Sequence[complex], c2: float, decay: str = "distance",
               far_fraction: float = 1 / 20) -> tuple[float, np.ndarray]:
    """Worst log-margin of the decay condition on the box ``spec.window``.

    ``decay="box"`` is the literal ``|G(m, n)| < exp(-c2 |I|)``;
    ``decay="distance"`` requires ``|G(m, n)| <= exp(-c2 |m - n|)``.  Both
    are tested for ``|m - n| > far_fraction |I|``.  Returns the min margin
    and the per-z margins.
    """
    L = spec.size
    idx = np.arange(L)
    dist = np.abs(idx[:, None] - idx[None, :])
    far = dist > far_fraction * L
    if not far.any():
        return math.inf, np.full(len(zs), math.inf)
    target = c2 * (dist if decay == "distance" else np.full_like(dist, L))
    margins = []
    for z in zs:
        G = green_direct(spec, complex(z))
        with np.errstate(divide="ignore"):
            lg = -np.log(np.abs(G))
        margins.append(float((lg - target)[far].min()))
    margins = np.array(margins)
    return float(margins.min()), margins


@dataclass
class GreenBoxReport:
    N: int
    theta: float
    z_grid: list[complex]
    psi_required: float
    c2: float
    decay: str
    search: str
    found: tuple[int, int] | None = None
    location: str | None = None
    worst_margin: float | None = None
    z_margins: list[float] = field(default_factory=list)
    candidates_tried: int = 0
    psi_dominates_log: bool | None = None

    @property
    def length(self) -> int | None:
        return None if self.found is None else self.found[1] - self.found[0] + 1

    def to_json(self) -> dict:
        return {
            "N": self.N, "theta": self.theta,
            "z_grid": [[z.real, z.imag] for z in self.z_grid],
            "psi_required": self.psi_required, "c2": self.c2, "decay": self.decay,
            "search": self.search, "found": list(self.found) if self.found else None,
            "location": self.location, "worst_margin": self.worst_margin,
            "z_margins": self.z_margins, "candidates_tried": self.candidates_tried,
            "psi_dominates_log": self.psi_dominates_log,
        }


def _candidates(N: int, length: int, search: str):
    """Candidate intervals in scan order: smallest shift first, right window first."""
    (rlo, rhi), (llo, lhi) = window_bounds(N)
    if length > rhi - rlo + 1:
        raise GeometryError(f"interval length {length} exceeds window width {rhi - rlo + 1}")
    if search == "window_shift":
        for j in range(rhi - rlo - length + 2):
            yield (rlo + j, rlo + j + length - 1), "right"
            yield (lhi - j - length + 1, lhi - j), "left"
    elif search == "four_intervals":
        n = max(1, -(-(length + 1) // 2))
        for j in range(rhi - rlo + 1):
            for tag, c in (("right", rlo + j), ("left", lhi - j)):
                lo_w, hi_w = (rlo, rhi) if tag == "right" else (llo, lhi)
                for a, b in ((-n, n), (-n, n - 1), (-n + 1, n), (-n + 1, n - 1)):
                    I = (c + a, c + b)
                    if lo_w <= I[0] and I[1] <= hi_w and I[1] - I[0] + 1 >= length:
                        yield I, tag
    else:
        raise ValueError(f"unknown search mode {search!r}")


def good_box_scan(spec: OperatorSpec, N: int, psi: float | Callable[[float], float], c2: float,
                  zs: Sequence[complex], search: str = "window_shift", decay: str = "distance",
                  C2: float = 1.01, far_fraction: float = 1 / 20) -> GreenBoxReport:
    """Find the first interval in the side windows on which the Green's function decays.

    ``psi`` is either the exponent ``delta`` of ``Psi(N) = N^delta`` or a
    callable.  Candidates have length ``ceil(Psi(N))``.  The hypothesis
    ``Psi(N) >= (log N)^C2`` is recorded in the report but not enforced.
    """
    psi_fn = psi if callable(psi) else (lambda t, d=float(psi): t ** d)
    need = float(psi_fn(N))
    length = max(1, math.ceil(need - 1e-12))
    zs = [complex(z) for z in zs]
    rep = GreenBoxReport(N, spec.theta, zs, need, c2, decay, search,
                         psi_dominates_log=need >= math.log(N) ** C2)
    for I, tag in _candidates(N, length, search):
        rep.candidates_tried += 1
        worst, per_z = box_margin(spec.with_window(*I), zs, c2, decay, far_fraction)
        if worst >= 0:
            rep.found, rep.location = I, tag
            rep.worst_margin, rep.z_margins = worst, per_z.tolist()
            break
    return rep


def _entry_on_box(spec: OperatorSpec, half: int, z: complex, j: int, n: int) -> complex:
    box = spec.with_window(-half, half)
    return complex(green_column(box, z, n)[j + half])


def full_line_entry_check(spec: OperatorSpec, big_box_size: int, z: complex, j: int, N_target: int,
                          I: tuple[int, int], c2: float, tol: float = 1e-6) -> dict:
    """Log-margin of ``|G(z)(j, N)|`` against ``T^4 exp(-(c2/20)|I|)`` on the line.

    The line resolvent is replaced by a centred box of ``big_box_size``
    sites; doubling the box must change the entry by at most ``tol``
    relative (absolute when the entry is below ``tol``).
    """
    if j == N_target:
        raise ValueError("j must differ from N_target")
    if big_box_size < 4 * abs(N_target):
        raise ValueError("big box must be at least 4 N_target")
    if z.imag == 0:
        raise ValueError("need Im z != 0")
    half = big_box_size // 2
    g1 = _entry_on_box(spec, half, z, j, N_target)
    g2 = _entry_on_box(spec, 2 * half, z, j, N_target)
    diff = abs(g1 - g2)
    if diff > tol * max(abs(g2), 1.0):
        raise UnconvergedError(f"box doubling changed G by {diff:.2e}")
    T = 1.0 / abs(z.imag)
    length = I[1] - I[0] + 1
    log_bound = 4 * math.log(T) - (c2 / 20) * length
    log_entry = math.log(abs(g2)) if g2 != 0 else -math.inf
    return {"entry": abs(g2), "log_bound": log_bound, "margin": log_bound - log_entry,
            "doubling_diff": diff}


def decay_rate_fit(spec: OperatorSpec, z: complex, site: int | None = None,
                   max_dist: int | None = None, floor: float = 1e-250) -> tuple[float, float]:
    """Least-squares rate ``c`` in ``|G(m, m+d)| ~ exp(-c d)`` from one column.

    Returns ``(rate, r2)``; distances where the entry has underflowed below
    ``floor`` are dropped.
    """
    x1, x2 = spec.window
    site = (x1 + x2) // 2 if site is None else site
    col = np.abs(green_column(spec, z, site))
    d = np.arange(x1, x2 + 1) - site
    keep = (d > 0) & (col > floor)
    if max_dist is not None:
        keep &= d <= max_dist
    if keep.sum() < 3:
        raise ValueError("too few usable distances for a fit")
    fit = stats.linregress(d[keep], np.log(col[keep]))
    return float(-fit.slope), float(fit.rvalue**2)
