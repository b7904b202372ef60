"""Quasi-periodic Schrodinger operators, finite truncations and transfer matrices.

Conventions
-----------
The one-step matrix is ``S_z(theta) = [[z - V(theta), -1], [1, 0]]`` and

    M_[x1, x2](theta) = S_z(theta + x2 alpha) ... S_z(theta + x1 alpha),

a product of ``x2 - x1 + 1`` factors, so that
``M_[x1, x2](theta) = M_{x2-x1+1}(theta + x1 alpha)`` and ``M_N = M_[0, N-1]``.
With ``P_k(theta) = det(z - H_k(theta))``, ``P_0 = 1`` and ``P_{-1} = 0``:

    M_N(theta) = [[P_N(theta),     -P_{N-1}(theta + alpha)],
                  [P_{N-1}(theta), -P_{N-2}(theta + alpha)]].
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .arithmetic import FrequencyProfile, from_cf

__all__ = [
    "PotentialSpec",
    "OperatorSpec",
    "TransferProduct",
    "potential_eval",
    "assemble_finite",
    "transfer_product",
    "char_poly_det",
    "determinant_identity_check",
    "amo_spec",
    "transfer_log_norms",
]

_REALITY_TOL = 1e-14


@dataclass(frozen=True)
class PotentialSpec:
    """Real trigonometric polynomial ``V(theta) = sum_k c_k e^{2 pi i k theta}``.

    ``coeffs`` maps k to c_k and must satisfy ``c_{-k} = conj(c_k)``; a
    coefficient given only for k > 0 gets its mirror filled in.
    """

    coeffs: Mapping[int, complex]
    h: float = 1.0

    def __post_init__(self):
        full: dict[int, complex] = {}
        for k, c in dict(self.coeffs).items():
            full[int(k)] = complex(c)
        for k in list(full):
            if -k not in full:
                full[-k] = full[k].conjugate()
        for k, c in full.items():
            if abs(full[-k] - c.conjugate()) > 1e-12 * max(1.0, abs(c)):
                raise ValueError(f"coefficients at +-{abs(k)} violate reality")
        if not self.h > 0:
            raise ValueError("analyticity width h must be positive")
        object.__setattr__(self, "coeffs", dict(sorted(full.items())))

    @classmethod
    def cosine(cls, lam: float, h: float = 1.0) -> "PotentialSpec":
        """``2 lam cos(2 pi theta)``."""
        return cls({1: lam, -1: lam}, h)

    @classmethod
    def zero(cls) -> "PotentialSpec":
        return cls({}, 1.0)

    @property
    def sup_norm_h(self) -> float:
        return float(sum(abs(c) * math.exp(2 * math.pi * abs(k) * self.h)
                         for k, c in self.coeffs.items()))

    @property
    def sup_norm(self) -> float:
        """Bound on ``sup_theta |V(theta)|`` over the real circle."""
        return float(sum(abs(c) for c in self.coeffs.values()))

    def __call__(self, theta):
        return potential_eval(self, theta)

    def to_json(self) -> dict:
        return {"coeffs": [[k, c.real, c.imag] for k, c in self.coeffs.items()], "h": self.h}

    @classmethod
    def from_json(cls, d: dict) -> "PotentialSpec":
        return cls({int(k): complex(re, im) for k, re, im in d["coeffs"]}, float(d.get("h", 1.0)))


def potential_eval(V: PotentialSpec, theta):
    """Evaluate V at real phase(s); the imaginary residue is checked then dropped."""
    th = np.asarray(theta, dtype=float)
    if not V.coeffs:
        out = np.zeros(th.shape)
        return float(out) if out.ndim == 0 else out
    ks = np.array(list(V.coeffs.keys()))
    cs = np.array(list(V.coeffs.values()))
    if np.all(cs.imag == 0):
        # cosine series, avoids complex exponentials
        pos = ks > 0
        val = V.coeffs.get(0, 0).real + 2 * np.tensordot(
            np.cos(2 * np.pi * np.multiply.outer(th, ks[pos])), cs[pos].real, axes=([-1], [0]))
    else:
        z = np.exp(2j * np.pi * np.multiply.outer(th, ks)) @ cs
        if np.any(np.abs(z.imag) > _REALITY_TOL * max(1.0, float(np.abs(cs).sum()))):
            raise ValueError("potential evaluated to a non-real value")
        val = z.real
    val = np.asarray(val, dtype=float)
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class OperatorSpec:
    """Finite window of ``(H psi)_n = sum_m A_m psi_{n-m} + V(theta + n alpha) psi_n``.

    Without ``kernel`` the hopping is nearest neighbour with amplitude 1
    (``hopping=False`` switches it off, leaving a diagonal operator).
    ``kernel`` maps m to A_m and must satisfy ``conj(A_m) = A_{-m}``.
    """

    potential: PotentialSpec
    alpha: FrequencyProfile | float
    theta: float = 0.0
    window: tuple[int, int] = (0, 0)
    kernel: Mapping[int, complex] | None = None
    decay: tuple[float, float] | None = None  # (C1, c1) for the kernel
    hopping: bool = True
    K: float | None = None

    def __post_init__(self):
        x1, x2 = (int(v) for v in self.window)
        if x2 < x1:
            raise ValueError("window must satisfy x1 <= x2")
        object.__setattr__(self, "window", (x1, x2))
        if self.kernel is not None:
            ker = {int(m): complex(a) for m, a in dict(self.kernel).items()}
            for m, a in ker.items():
                if abs(ker.get(-m, 0) - a.conjugate()) > 1e-14 * max(1.0, abs(a)):
                    raise ValueError(f"kernel violates conj(A_m) = A_-m at m={m}")
            if self.decay is not None:
                C1, c1 = self.decay
                for m, a in ker.items():
                    if abs(a) > C1 * math.exp(-c1 * abs(m)) * (1 + 1e-12):
                        raise ValueError(f"|A_{m}| exceeds C1 exp(-c1 |m|)")
            object.__setattr__(self, "kernel", dict(sorted(ker.items())))
        if self.K is None:
            object.__setattr__(self, "K", self.gershgorin_K())
        elif self.K < 3:
            raise ValueError("spectrum radius K must be >= 3")

    @property
    def alpha_value(self) -> float:
        return self.alpha.alpha if isinstance(self.alpha, FrequencyProfile) else float(self.alpha)

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.window[0], self.window[1] + 1)

    @property
    def size(self) -> int:
        return self.window[1] - self.window[0] + 1

    @property
    def nearest_neighbour(self) -> bool:
        if self.kernel is None:
            return self.hopping
        return all(m in (-1, 1) and a == 1 for m, a in self.kernel.items() if a != 0)

    def hopping_norm(self) -> float:
        if self.kernel is None:
            return 2.0 if self.hopping else 0.0
        return float(sum(abs(a) for a in self.kernel.values()))

    def gershgorin_K(self) -> float:
        """Smallest K >= 3 with ``||H|| <= K - 1`` by the Gershgorin bound."""
        return max(3.0, self.potential.sup_norm + self.hopping_norm() + 1.0)

    def phases(self, sites=None) -> np.ndarray:
        n = self.sites if sites is None else np.asarray(sites)
        if isinstance(self.alpha, FrequencyProfile):
            return np.mod(self.theta + self.alpha.frac_multiples(n), 1.0)
        return self.theta + n * float(self.alpha)

    def diagonal(self) -> np.ndarray:
        return np.atleast_1d(potential_eval(self.potential, self.phases()))

    def with_window(self, x1: int, x2: int) -> "OperatorSpec":
        return replace(self, window=(x1, x2))

    def shifted(self, theta: float) -> "OperatorSpec":
        return replace(self, theta=theta)

    def to_json(self) -> dict:
        alpha = self.alpha.to_json() if isinstance(self.alpha, FrequencyProfile) else {"float_hint": self.alpha}
        d = {"potential": self.potential.to_json(), "alpha": alpha, "theta": self.theta,
             "window": list(self.window), "hopping": self.hopping, "K": self.K}
        if self.kernel is not None:
            d["kernel"] = [[m, a.real, a.imag] for m, a in self.kernel.items()]
        if self.decay is not None:
            d["decay"] = list(self.decay)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "OperatorSpec":
        a = d["alpha"]
        alpha = FrequencyProfile.from_json(a) if a.get("cf") else float(a["float_hint"])
        kernel = None
        if d.get("kernel") is not None:
            kernel = {int(m): complex(re, im) for m, re, im in d["kernel"]}
        return cls(PotentialSpec.from_json(d["potential"]), alpha, float(d.get("theta", 0.0)),
                   tuple(d["window"]), kernel, tuple(d["decay"]) if d.get("decay") else None,
                   bool(d.get("hopping", True)), d.get("K"))


def amo_spec(lam: float, alpha: FrequencyProfile | float | None = None, theta: float = 0.0,
             window: tuple[int, int] = (0, 0)) -> OperatorSpec:
    """Almost Mathieu operator with ``V = 2 lam cos(2 pi theta)``."""
    if alpha is None:
        alpha = from_cf([1] * 40, label="golden")
    return OperatorSpec(PotentialSpec.cosine(lam), alpha, theta, window)


def assemble_finite(spec: OperatorSpec, check: bool = True) -> np.ndarray:
    """Dense ``R_L H R_L`` on the window ``L``; hermitian by construction."""
    n = spec.size
    diag = spec.diagonal()
    if spec.kernel is None:
        H = np.diag(diag)
        if spec.hopping and n > 1:
            off = np.ones(n - 1)
            H = H + np.diag(off, 1) + np.diag(off, -1)
    else:
        cplx = any(a.imag != 0 for a in spec.kernel.values())
        H = np.diag(diag).astype(complex if cplx else float)
        for m, a in spec.kernel.items():
            if abs(m) >= n:
                continue
            val = a if cplx else a.real
            # (H psi)_i = sum_m A_m psi_{i-m}  ->  H[i, i-m] = A_m
            H += np.diag(np.full(n - abs(m), val), -m)
    if check:
        ev = np.linalg.eigvalsh(H)
        if max(abs(ev[0]), abs(ev[-1])) > spec.K - 1 + 1e-9:
            raise ValueError("spectral radius exceeds K - 1")
    return H


# ---------------------------------------------------------------------------
# Transfer matrices
# ---------------------------------------------------------------------------

@dataclass
class TransferProduct:
    """Renormalised transfer matrix ``M = matrix * exp(log_norm)``.

    ``matrix`` has max-abs entry 1.  ``log_det`` is the determinant of the
    product tracked through a QR factorisation of the partial products,
    which keeps ``det = 1`` checkable even when ``||M||`` is astronomically
    large (the entries of ``matrix`` alone no longer carry the determinant).
    """

    matrix: np.ndarray
    log_norm: float
    interval: tuple[int, int]
    log_det: complex = 0.0
    z: complex = 0.0

    @property
    def n_factors(self) -> int:
        return self.interval[1] - self.interval[0] + 1

    def scaled_back(self) -> np.ndarray:
        return self.matrix * math.exp(self.log_norm)

    def log_opnorm(self) -> float:
        return self.log_norm + math.log(np.linalg.norm(self.matrix, 2))

    def det(self) -> complex:
        return cmath.exp(self.log_det)


def _step_values(z: complex, spec: OperatorSpec, x1: int, x2: int) -> np.ndarray:
    v = np.atleast_1d(potential_eval(spec.potential, spec.phases(np.arange(x1, x2 + 1))))
    return z - v


def transfer_product(z: complex, spec: OperatorSpec, interval: tuple[int, int] | None = None) -> TransferProduct:
    """``M_[x1, x2](theta)`` for the spec's phase, renormalised every step."""
    if spec.kernel is not None and not spec.nearest_neighbour:
        raise ValueError("transfer matrices need nearest-neighbour hopping")
    x1, x2 = interval if interval is not None else spec.window
    if x2 < x1:
        raise ValueError("interval must contain at least one site")
    a = _step_values(z, spec, x1, x2)
    cplx = isinstance(z, complex) or np.iscomplexobj(a)
    # scalar loop: numpy call overhead dominates for 2x2 matrices
    m00, m01, m10, m11 = 1.0, 0.0, 0.0, 1.0
    q00, q01, q10, q11 = 1.0, 0.0, 0.0, 1.0
    log_norm = 0.0
    log_det = 0.0
    for s in a.tolist():
        m00, m01, m10, m11 = s * m00 - m10, s * m01 - m11, m00, m01
        c = max(abs(m00), abs(m01), abs(m10), abs(m11))
        m00, m01, m10, m11 = m00 / c, m01 / c, m10 / c, m11 / c
        log_norm += math.log(c)
        # Gram-Schmidt QR of S @ Q, R with positive real diagonal
        a0, a1 = s * q00 - q10, q00
        b0, b1 = s * q01 - q11, q01
        r11 = math.hypot(abs(a0), abs(a1))
        a0, a1 = a0 / r11, a1 / r11
        r12 = a0.conjugate() * b0 + a1.conjugate() * b1
        b0, b1 = b0 - r12 * a0, b1 - r12 * a1
        r22 = math.hypot(abs(b0), abs(b1))
        q00, q10, q01, q11 = a0, a1, b0 / r22, b1 / r22
        log_det += math.log(r11 * r22)
    dtype = complex if cplx else float
    M = np.array([[m00, m01], [m10, m11]], dtype=dtype)
    log_det = complex(log_det) + cmath.log(complex(q00 * q11 - q01 * q10))
    return TransferProduct(M, log_norm, (x1, x2), log_det, z)


def char_poly_det(z: complex, spec: OperatorSpec, x1: int, x2: int) -> tuple[complex, float]:
    """``det(z - H_[x1, x2])`` as ``(mantissa, log_scale)`` via the three-term recurrence.

    An empty window (x2 = x1 - 1) gives the convention ``det = 1``.
    """
    if x2 == x1 - 1:
        return 1.0, 0.0
    if x2 < x1 - 1:
        raise ValueError("invalid window")
    a = _step_values(z, spec, x1, x2)
    p_prev, p = 0.0, 1.0
    log_scale = 0.0
    for s in a:
        p_prev, p = p, s * p - p_prev
        c = max(abs(p), abs(p_prev))
        if c > 1e100 or (0 < c < 1e-100):
            p, p_prev = p / c, p_prev / c
            log_scale += math.log(c)
    return p, log_scale


def determinant_identity_check(z: complex, spec: OperatorSpec, N: int) -> float:
    """Compare ``M_N(theta)`` with its block of characteristic determinants.

    Returns the max entrywise deviation relative to the largest entry.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    x1 = spec.window[0]
    tp = transfer_product(z, spec, (x1, x1 + N - 1))

    def det(lo, hi):
        m, s = char_poly_det(z, spec, lo, hi)
        return m, s

    blocks = [
        (det(x1, x1 + N - 1), 1),        # P_N(theta)
        (det(x1 + 1, x1 + N - 1), -1),   # P_{N-1}(theta + alpha)
        (det(x1, x1 + N - 2), 1),        # P_{N-1}(theta)
        (det(x1 + 1, x1 + N - 2) if N >= 2 else (0.0, 0.0), -1),  # P_{N-2}(theta + alpha)
    ]
    ref = np.array([sign * m * math.exp(s - tp.log_norm) for (m, s), sign in blocks]).reshape(2, 2)
    dev = np.abs(ref - tp.matrix).max() / np.abs(tp.matrix).max()
    return float(dev)


def transfer_log_norms(z: complex, spec: OperatorSpec, thetas: np.ndarray, N: int,
                       start: int = 0) -> np.ndarray:
    """``log ||M_[start, start+N-1](theta)||`` for many phases at once."""
    thetas = np.asarray(thetas, dtype=float)
    alpha = spec.alpha_value
    dtype = complex if isinstance(z, complex) and z.imag != 0 else float
    z = z if dtype is complex else float(np.real(z))
    a = np.ones(thetas.shape, dtype=dtype)
    b = np.zeros(thetas.shape, dtype=dtype)
    c = np.zeros(thetas.shape, dtype=dtype)
    d = np.ones(thetas.shape, dtype=dtype)
    acc = np.zeros(thetas.shape)
    if isinstance(spec.alpha, FrequencyProfile):
        shifts = spec.alpha.frac_multiples(np.arange(start, start + N))
    else:
        shifts = np.arange(start, start + N) * alpha
    for k in range(N):
        s = z - potential_eval(spec.potential, thetas + shifts[k])
        a, b, c, d = s * a - c, s * b - d, a, b
        m = np.maximum(np.maximum(np.abs(a), np.abs(b)), np.maximum(np.abs(c), np.abs(d)))
        a, b, c, d = a / m, b / m, c / m, d / m
        acc += np.log(m)
    # spectral norm of [[a, b], [c, d]]
    fro2 = np.abs(a) ** 2 + np.abs(b) ** 2 + np.abs(c) ** 2 + np.abs(d) ** 2
    det = np.abs(a * d - b * c)
    smax2 = 0.5 * (fro2 + np.sqrt(np.maximum(fro2**2 - 4 * det**2, 0.0)))
    return acc + 0.5 * np.log(smax2)

