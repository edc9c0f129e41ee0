"""Scalar integrands ``g_i(t) = (|t| - delta_i)_+^p / p`` and their regularizations.

Every kernel accepts a float or an ndarray for ``t`` and broadcasts. Axis
indices are 0-based, as for numpy axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError


@dataclass(frozen=True)
class Exponents:
    """Growth exponent ``p`` and per-axis degeneracy thresholds."""

    p: float
    deltas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if not np.isfinite(self.p) or self.p < 2:
            raise PreconditionError(f"p must satisfy p >= 2, got {self.p}")
        if len(self.deltas) < 1:
            raise PreconditionError("at least one threshold is required")
        if any(not np.isfinite(d) or d < 0 for d in self.deltas):
            raise PreconditionError(f"thresholds must be >= 0, got {self.deltas}")

    @property
    def dim(self) -> int:
        return len(self.deltas)

    @property
    def delta_bar(self) -> float:
        """``1 + max_i delta_i``."""
        return 1.0 + max(self.deltas)

    @property
    def p_conjugate(self) -> float:
        return self.p / (self.p - 1.0)

    def delta(self, axis: int) -> float:
        if not isinstance(axis, (int, np.integer)) or not 0 <= axis < self.dim:
            raise PreconditionError(f"axis must be in [0, {self.dim}), got {axis!r}")
        return self.deltas[axis]


def _unwrap(x):
    x = np.asarray(x)
    return x[()] if x.ndim == 0 else x


def _excess(exp: Exponents, axis: int, t):
    """``|t| - delta_i`` (may be negative)."""
    return np.abs(np.asarray(t, dtype=float)) - exp.delta(axis)


def _pos_power(base, a: float):
    # base clamped at 0; 0**a == 0 for a > 0
    b = np.maximum(base, 0.0)
    return np.power(b, a)


def _check_eps(eps):
    if eps < 0 or not np.isfinite(eps):
        raise PreconditionError(f"eps must be >= 0, got {eps}")


def g(exp: Exponents, axis: int, t):
    return _unwrap(_pos_power(_excess(exp, axis, t), exp.p) / exp.p)


def g_prime(exp: Exponents, axis: int, t):
    t = np.asarray(t, dtype=float)
    return _unwrap(_pos_power(_excess(exp, axis, t), exp.p - 1) * np.sign(t))


def g_second(exp: Exponents, axis: int, t):
    """Second derivative; for ``p == 2`` the right-continuous value 1 is used on ``|t| >= delta_i``."""
    e = _excess(exp, axis, t)
    val = (exp.p - 1) * _pos_power(e, exp.p - 2)
    return _unwrap(np.where(e >= 0, val, 0.0))


def g_third(exp: Exponents, axis: int, t):
    """Third derivative away from ``|t| = delta_i``; set to 0 on the band edge and inside."""
    t = np.asarray(t, dtype=float)
    e = _excess(exp, axis, t)
    safe = np.where(e > 0, e, 1.0)
    val = (exp.p - 1) * (exp.p - 2) * np.power(safe, exp.p - 3) * np.sign(t)
    return _unwrap(np.where(e > 0, val, 0.0))


def g_eps(exp: Exponents, axis: int, t, eps: float):
    _check_eps(eps)
    t = np.asarray(t, dtype=float)
    return _unwrap(g(exp, axis, t) + 0.5 * eps * t * t)


def g_eps_prime(exp: Exponents, axis: int, t, eps: float):
    _check_eps(eps)
    t = np.asarray(t, dtype=float)
    return _unwrap(g_prime(exp, axis, t) + eps * t)


def g_eps_second(exp: Exponents, axis: int, t, eps: float):
    _check_eps(eps)
    return _unwrap(g_second(exp, axis, t) + eps)


def g_eps_third(exp: Exponents, axis: int, t, eps: float):
    _check_eps(eps)
    return g_third(exp, axis, t)


def growth_bounds(exp: Exponents, axis: int, t, eps: float):
    """Lower and upper envelopes of ``g_eps`` valid for ``0 <= eps <= 1``.

    Lower: ``(|t|^p / 2^(p-1) - delta_bar^p) / p``.
    Upper: ``2 |t|^p / p + (p - 2) / (2 p)``.
    """
    if not 0 <= eps <= 1:
        raise PreconditionError(f"growth bounds need 0 <= eps <= 1, got {eps}")
    exp.delta(axis)
    p = exp.p
    a = np.power(np.abs(np.asarray(t, dtype=float)), p)
    lower = (a / 2 ** (p - 1) - exp.delta_bar**p) / p
    upper = 2 * a / p + (p - 2) / (2 * p)
    return _unwrap(lower), _unwrap(upper)


def second_derivative_lower_bound(exp: Exponents, axis: int, t, T):
    """Lower bound for ``g''(t)`` on ``|t| >= T`` with ``T >= delta_i``."""
    d = exp.delta(axis)
    p = exp.p
    t = np.asarray(t, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.any(T < d):
        raise PreconditionError("need T >= delta_i")
    if np.any(np.abs(t) < T):
        raise PreconditionError("need |t| >= T")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(T > d, (T - d) / np.where(T > 0, T, 1.0), 0.0)
    if p > 2:
        factor = np.power(ratio, p - 2)
    else:
        factor = np.ones_like(ratio)
    tail = _pos_power(np.abs(t) - T, 1.0)
    return _unwrap((p - 1) * factor * np.power(T * T + tail * tail, (p - 2) / 2))


def lipschitz_gap_bound(exp: Exponents, axis: int, t1, t2):
    """``(|g(t1) - g(t2)|, (|t1|^(p-1) + |t2|^(p-1)) |t1 - t2|)``."""
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    gap = np.abs(g(exp, axis, t1) - g(exp, axis, t2))
    q = exp.p - 1
    bound = (np.abs(t1) ** q + np.abs(t2) ** q) * np.abs(t1 - t2)
    return _unwrap(gap), _unwrap(bound)


def strict_convexity_check(exp: Exponents, axis: int, t1, t2, s):
    """Both sides of the convexity inequality at ``(1 - s) t1 + s t2``.

    ``strict_expected`` is true exactly when ``|t1 - t2| > 2 delta_i``.
    """
    s = np.asarray(s, dtype=float)
    if np.any((s <= 0) | (s >= 1)):
        raise PreconditionError("s must lie in the open interval (0, 1)")
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    lhs = g(exp, axis, (1 - s) * t1 + s * t2)
    rhs = (1 - s) * g(exp, axis, t1) + s * g(exp, axis, t2)
    strict = np.abs(t1 - t2) > 2 * exp.delta(axis)
    return _unwrap(lhs), _unwrap(rhs), _unwrap(strict)
