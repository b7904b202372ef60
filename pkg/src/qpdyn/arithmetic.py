"""Frequency arithmetic: torus distance, continued fractions, Diophantine conditions.

A frequency is carried around as a :class:`FrequencyProfile`, which keeps the
partial quotients exactly (Python integers) next to a float value.  Anything
sensitive to the tail of the expansion (Liouville behaviour, huge multiples
``n * alpha``) is evaluated from the integer data rather than from the float.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import mpmath
import numpy as np

__all__ = [
    "DiophantineCondition",
    "FrequencyProfile",
    "ConditionMargin",
    "PrecisionExhaustedError",
    "RationalFrequencyError",
    "torus_norm",
    "convergents",
    "continued_fraction",
    "from_cf",
    "golden_mean",
    "beta_exponent_estimate",
    "verify_condition",
    "build_test_frequency",
]

_EPS = np.finfo(float).eps
# multiples below this use the split-float path, above it exact integers
_SPLIT_LIMIT = 2**26


class RationalFrequencyError(ValueError):
    """The expansion terminated: alpha is rational to working precision."""


class PrecisionExhaustedError(ValueError):
    """Float input cannot resolve the requested number of partial quotients."""


def torus_norm(x):
    """Distance from ``x`` to the nearest integer.

    Works on scalars and arrays; the result lies in ``[0, 1/2]``.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("torus_norm requires finite input")
    out = np.abs(arr - np.rint(arr))
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Diophantine-type conditions
# ---------------------------------------------------------------------------

_FORMS = ("power", "log_power", "stretched_exp")


@dataclass(frozen=True)
class DiophantineCondition:
    """Lower envelope ``||n alpha|| > 1/Phi(|n|)``.

    ``form`` selects Phi:

    * ``power``          Phi(t) = t**gamma / eta
    * ``log_power``      Phi(t) = exp(kappa * log(t)**gamma) / eta
    * ``stretched_exp``  Phi(t) = exp(kappa * t**gamma) / eta
    """

    form: str
    eta: float
    gamma: float
    kappa: float | None = None

    def __post_init__(self):
        if self.form not in _FORMS:
            raise ValueError(f"unknown condition form {self.form!r}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.form == "power":
            if self.gamma < 1:
                raise ValueError("power-law condition needs gamma >= 1")
        else:
            if self.kappa is None or not self.kappa > 0:
                raise ValueError(f"{self.form} condition needs kappa > 0")
            if self.form == "log_power" and not self.gamma > 1:
                raise ValueError("log-power condition needs gamma > 1")
            if self.form == "stretched_exp" and not self.gamma > 0:
                raise ValueError("stretched-exponential condition needs gamma > 0")

    @classmethod
    def power_law(cls, eta: float, gamma: float) -> "DiophantineCondition":
        return cls("power", eta, gamma)

    @classmethod
    def log_power(cls, eta: float, kappa: float, gamma: float) -> "DiophantineCondition":
        return cls("log_power", eta, gamma, kappa)

    @classmethod
    def stretched_exp(cls, eta: float, kappa: float, gamma: float) -> "DiophantineCondition":
        return cls("stretched_exp", eta, gamma, kappa)

    def log_phi(self, t):
        """``log Phi(t)``; safe for arguments where Phi itself overflows."""
        t = np.asarray(t, dtype=float)
        lt = np.log(t)
        if self.form == "power":
            out = self.gamma * lt
        elif self.form == "log_power":
            out = self.kappa * np.abs(lt) ** self.gamma
        else:
            out = self.kappa * t**self.gamma
        out = out - math.log(self.eta)
        return float(out) if out.ndim == 0 else out

    def phi(self, t):
        return np.exp(self.log_phi(t))

    def _critical_point(self) -> float:
        # unique minimiser of Phi(t)/t on t >= 1 (1 if Phi(t)/t never decreases)
        if self.form == "power":
            return 1.0
        if self.form == "log_power":
            return math.exp((self.kappa * self.gamma) ** (-1.0 / (self.gamma - 1.0)))
        return max(1.0, (self.kappa * self.gamma) ** (-1.0 / self.gamma))

    @property
    def rho(self) -> float:
        """Threshold from which Phi(t)/t is monotone increasing (at least 2)."""
        return max(2.0, self._critical_point())

    @property
    def mu(self) -> float:
        """Sup of Phi on ``[1, rho]``; Phi is increasing so this is Phi(rho)."""
        return float(self.phi(self.rho))

    def inverse_phi(self, y: float) -> float:
        """Solve ``Phi(M) = y`` for ``M``."""
        if not y > 0:
            raise ValueError("Phi takes positive values only")
        ly = math.log(self.eta * y)
        if self.form == "power":
            return math.exp(ly / self.gamma)
        if ly <= 0:
            raise ValueError(f"Phi(M) = {y} has no solution with M > 1")
        if self.form == "log_power":
            return math.exp((ly / self.kappa) ** (1.0 / self.gamma))
        return (ly / self.kappa) ** (1.0 / self.gamma)

    def to_dict(self) -> dict:
        d = {"form": self.form, "eta": self.eta, "gamma": self.gamma}
        if self.kappa is not None:
            d["kappa"] = self.kappa
        d["rho"] = self.rho
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiophantineCondition":
        return cls(d["form"], float(d["eta"]), float(d["gamma"]),
                   None if d.get("kappa") is None else float(d["kappa"]))


# ---------------------------------------------------------------------------
# Continued fractions
# ---------------------------------------------------------------------------

def convergents(coeffs: Sequence[int]) -> list[tuple[int, int]]:
    """Convergents ``(p_k, q_k)`` of ``[0; a_1, a_2, ...]``, k = 1..len(coeffs)."""
    p_prev, p = 1, 0
    q_prev, q = 0, 1
    out = []
    for a in coeffs:
        a = int(a)
        if a < 1:
            raise ValueError("partial quotients must be positive integers")
        p_prev, p = p, a * p + p_prev
        q_prev, q = q, a * q + q_prev
        out.append((p, q))
    return out


@dataclass(frozen=True)
class FrequencyProfile:
    """A frequency in (0, 1) with its continued-fraction data.

    ``cf`` holds a_1..a_depth.  When ``exact`` is true the quotients were
    supplied (or constructed) as integers and the deepest convergent is used
    as the reference value; otherwise they were read off a float.
    """

    alpha: float
    cf: tuple[int, ...]
    convergents: tuple[tuple[int, int], ...]
    exact: bool
    beta_estimate: float = 0.0
    condition: DiophantineCondition | None = None
    label: str = ""
    _split: tuple[float, float, float] = field(default=(0.0, 0.0, 0.0), repr=False, compare=False)

    @property
    def depth(self) -> int:
        return len(self.cf)

    @property
    def denominators(self) -> list[int]:
        return [q for _, q in self.convergents]

    @property
    def fraction(self) -> Fraction:
        if self.exact:
            p, q = self.convergents[-1]
            return Fraction(p, q)
        return Fraction(self.alpha)

    @property
    def advertised_scale(self) -> int:
        """Largest n for which ||n alpha|| is resolved by the stored expansion."""
        qs = self.denominators
        return qs[-2] if len(qs) >= 2 else qs[-1]

    def frac_multiples(self, n) -> np.ndarray:
        """Fractional parts ``{n alpha}`` with near-exact accuracy.

        Multiples below 2**26 use a three-way split of alpha whose partial
        products are exact in double precision; larger ones go through
        integer arithmetic on the deepest convergent.
        """
        n = np.asarray(n)
        scalar = n.ndim == 0
        n = np.atleast_1d(n).astype(np.int64)
        out = np.empty(n.shape, dtype=float)
        small = np.abs(n) < _SPLIT_LIMIT
        hi, mid, lo = self._split
        ns = n[small].astype(float)
        f = np.mod(ns * hi, 1.0) + np.mod(ns * mid, 1.0) + ns * lo
        out[small] = np.mod(f, 1.0)
        if np.any(~small):
            fr = self.fraction
            p, q = fr.numerator, fr.denominator
            out[~small] = [float(Fraction((int(k) * p) % q, q)) for k in n[~small]]
        return float(out[0]) if scalar else out

    def norm_multiples(self, n):
        """``||n alpha||_T`` evaluated through :meth:`frac_multiples`."""
        f = self.frac_multiples(n)
        return np.minimum(f, 1.0 - f) if np.ndim(f) else min(f, 1.0 - f)

    def with_condition(self, cond: DiophantineCondition | None) -> "FrequencyProfile":
        return _make_profile(self.cf, self.exact, alpha=None if self.exact else self.alpha,
                             condition=cond, label=self.label)

    def to_json(self) -> dict:
        d = {"cf": list(self.cf), "float_hint": self.alpha, "exact": self.exact}
        if self.condition is not None:
            d["condition"] = self.condition.to_dict()
        if self.label:
            d["label"] = self.label
        return d

    @classmethod
    def from_json(cls, d: dict) -> "FrequencyProfile":
        cond = d.get("condition")
        cond = DiophantineCondition.from_dict(cond) if cond else None
        if d.get("cf"):
            prof = from_cf(d["cf"], condition=cond, label=d.get("label", ""))
            hint = d.get("float_hint")
            if hint is not None and abs(hint - prof.alpha) > 1e-9:
                raise ValueError("float_hint disagrees with the continued fraction")
            return prof
        return continued_fraction(float(d["float_hint"]), int(d.get("depth", 12)), condition=cond)


def _split_alpha(fr: Fraction) -> tuple[float, float, float]:
    hi = Fraction(math.floor(fr * 2**26), 2**26)
    rest = fr - hi
    mid = Fraction(math.floor(rest * 2**52), 2**52)
    return float(hi), float(mid), float(rest - mid)


def _make_profile(cf, exact, alpha=None, condition=None, label=""):
    cf = tuple(int(a) for a in cf)
    conv = tuple(convergents(cf))
    if exact:
        p, q = conv[-1]
        fr = Fraction(p, q)
        alpha = float(fr)
    else:
        fr = Fraction(alpha)
    prof = FrequencyProfile(alpha=alpha, cf=cf, convergents=conv, exact=exact,
                            condition=condition, label=label, _split=_split_alpha(fr))
    if len(conv) >= 3:
        object.__setattr__(prof, "beta_estimate", beta_exponent_estimate(prof))
    return prof


def from_cf(coeffs: Sequence[int], condition: DiophantineCondition | None = None,
            label: str = "") -> FrequencyProfile:
    """Profile for ``[0; a_1, a_2, ...]`` given exactly."""
    if len(coeffs) < 1:
        raise ValueError("need at least one partial quotient")
    return _make_profile(coeffs, True, condition=condition, label=label)


def continued_fraction(alpha: float | None = None, depth: int = 10, *,
                       coeffs: Sequence[int] | None = None,
                       condition: DiophantineCondition | None = None) -> FrequencyProfile:
    """Continued-fraction profile of ``alpha`` in (0, 1) up to ``depth`` quotients.

    Float input is expanded while the propagated rounding error of the
    residual stays below half the mantissa (relative error 2**-26).  Past that
    point the quotients are noise and :class:`PrecisionExhaustedError` is
    raised; pass ``coeffs`` instead.  A residual that vanishes within its
    error bar means alpha is rational at working precision.
    """
    if coeffs is not None:
        return from_cf(list(coeffs)[:depth] if depth else coeffs, condition=condition)
    if alpha is None or not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    x = float(alpha)
    err = _EPS * x
    out = []
    for _ in range(depth):
        if x <= err:
            raise RationalFrequencyError(
                f"alpha={alpha!r} is rational to working precision after {len(out)} quotients")
        if err > math.sqrt(_EPS) * x:
            raise PrecisionExhaustedError(
                f"float alpha resolves only {len(out)} partial quotients; supply coeffs")
        y = 1.0 / x
        a = math.floor(y)
        out.append(a)
        err = err / (x * x) + _EPS * y
        x = y - a
    return _make_profile(out, False, alpha=float(alpha), condition=condition)


def golden_mean(depth: int = 40, condition: DiophantineCondition | None = None) -> FrequencyProfile:
    """``(sqrt(5) - 1) / 2`` as an exact all-ones expansion."""
    return from_cf([1] * depth, condition=condition, label="golden")


def beta_exponent_estimate(profile: FrequencyProfile) -> float:
    """Truncated estimate of beta(alpha) from the available quotients.

    Returns ``max_k log(a_{k+1}) / q_k`` over the stored expansion.  Since
    ``q_{k+1} = a_{k+1} q_k + q_{k-1}`` and ``log(q_k)/q_k -> 0``, this has
    the same limsup as ``log(q_{k+1})/q_k`` and ``-log||q_k alpha||/q_k``.
    It is a lower estimate tied to ``profile.depth``, not a limit.
    """
    cf, qs = profile.cf, profile.denominators
    if len(qs) < 3:
        raise ValueError("beta estimate needs at least 3 convergents")
    return max(math.log(cf[k + 1]) / qs[k] for k in range(len(cf) - 1))


# ---------------------------------------------------------------------------
# Condition checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionMargin:
    """``min_{1<=n<=N} ||n alpha|| Phi(n)`` and where it is attained."""

    margin: float
    n_min: int
    N: int

    @property
    def holds(self) -> bool:
        return self.margin > 1.0


def verify_condition(profile: FrequencyProfile, N: int,
                     cond: DiophantineCondition | None = None,
                     chunk: int = 1 << 20) -> ConditionMargin:
    """Worst-case margin of ``||n alpha|| > 1/Phi(n)`` over ``1 <= n <= N``.

    A margin above 1 certifies the condition up to scale N.
    """
    cond = cond or profile.condition
    if cond is None:
        raise ValueError("no Diophantine condition given")
    N = int(N)
    if N < 1:
        raise ValueError("N must be >= 1")
    best_log, best_n = math.inf, 1
    for start in range(1, N + 1, chunk):
        n = np.arange(start, min(N, start + chunk - 1) + 1, dtype=np.int64)
        nrm = profile.norm_multiples(n)
        with np.errstate(divide="ignore"):
            lm = np.log(nrm) + cond.log_phi(n.astype(float))
        i = int(np.argmin(lm))
        if lm[i] < best_log:
            best_log, best_n = float(lm[i]), int(n[i])
    return ConditionMargin(math.exp(best_log) if best_log > -700 else 0.0, best_n, N)


def _auto_eta(cond_form: str, kappa: float, gamma: float) -> float:
    # largest eta (capped at 1/2) keeping Phi(t)/t >= 3 on t >= 1
    probe = DiophantineCondition(cond_form, 1.0, gamma, kappa)
    t0 = probe._critical_point()
    log_min = float(probe.log_phi(t0)) - math.log(t0)
    return min(0.5, math.exp(log_min) / 3.0)


def build_test_frequency(kind: str, *, depth: int = 8, eta: float | None = None,
                         kappa: float = 1.0, gamma: float = 2.0,
                         max_log10_q: float = 4000.0) -> FrequencyProfile:
    """Construct an exact frequency with prescribed approximation behaviour.

    ``diophantine`` returns the golden mean.  The Liouville kinds choose
    ``a_{k+1} = floor(Phi(q_k)/q_k) - 2`` which forces
    ``||q_k alpha|| > 1/(q_k (a_{k+1} + 2)) >= 1/Phi(q_k)``; between
    convergents the best-approximation property carries the bound over.
    The quotients grow without bound, so any power-law condition with
    gamma = 1 eventually fails.

    Parameters
    ----------
    kind : {'diophantine', 'log_liouville', 'stretched_liouville'}
    depth : int
        Number of partial quotients (the expansion stops earlier if q_k
        would exceed ``10**max_log10_q``).
    eta, kappa, gamma : float
        Condition parameters.  When ``eta`` is omitted the largest value
        keeping the schedule feasible is used (at most 1/2).
    """
    if kind == "diophantine":
        cond = DiophantineCondition.power_law(eta if eta is not None else 0.38, 1.0)
        return golden_mean(max(depth, 40), condition=cond)
    forms = {"log_liouville": "log_power", "stretched_liouville": "stretched_exp"}
    if kind not in forms:
        raise ValueError(f"unknown frequency kind {kind!r}")
    form = forms[kind]
    if eta is None:
        eta = _auto_eta(form, kappa, gamma)
    cond = DiophantineCondition(form, eta, gamma, kappa)
    saved_dps = mpmath.mp.dps
    try:
        mpmath.mp.dps = 50
        cf: list[int] = []
        q_prev, q = 0, 1
        for _ in range(depth):
            # log(Phi(q)/q), evaluated without overflow
            lq = mpmath.log(q)
            if form == "log_power":
                lr = kappa * lq**gamma - mpmath.log(eta) - lq
            else:
                lr = kappa * mpmath.mpf(q) ** gamma - mpmath.log(eta) - lq
            if lr > mpmath.log(10) * max_log10_q:
                break
            mpmath.mp.dps = max(50, int(lr / mpmath.log(10)) + 30)
            a = int(mpmath.floor(mpmath.exp(lr))) - 2
            if a < 1:
                raise ValueError(
                    f"infeasible schedule: Phi(q)/q < 3 at q={q}; lower eta (got {eta})")
            cf.append(a)
            q_prev, q = q, a * q + q_prev
    finally:
        mpmath.mp.dps = saved_dps
    if len(cf) < 3:
        raise ValueError("schedule produced fewer than 3 quotients; raise max_log10_q")
    return from_cf(cf, condition=cond, label=kind)
