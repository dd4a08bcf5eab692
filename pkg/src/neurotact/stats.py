"""Significance tests and effect sizes used to compare pipeline variants."""

from __future__ import annotations

import math

import numpy as np


def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 1e-15) -> float:
    # Lentz continued fraction for the incomplete beta function
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
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
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_tailed(t: float, dof: float) -> float:
    """Two-tailed Student-t p-value for real-valued degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc(dof / 2.0, 0.5, dof / (dof + t * t))


def normal_two_tailed(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


def welch_t(a, b):
    """Welch's unequal-variance t-test: returns (t, dof, two-tailed p).

    Two constant samples with different means give the limiting t = +-inf, p = 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("Welch's t-test needs at least 2 samples per group")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    diff = a.mean() - b.mean()
    if se2 == 0.0:
        dof = float(a.size + b.size - 2)
        if diff == 0.0:
            return 0.0, dof, 1.0
        return math.copysign(math.inf, diff), dof, 0.0
    t = diff / math.sqrt(se2)
    dof = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    return float(t), float(dof), t_two_tailed(t, dof)


def cohen_d(a, b) -> float:
    """Mean difference over the pooled standard deviation (+-inf if that is zero)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = a.size, b.size
    if na + nb < 3:
        raise ValueError("Cohen's d needs at least 3 samples in total")
    pooled = ((na - 1) * a.var(ddof=1 if na > 1 else 0)
              + (nb - 1) * b.var(ddof=1 if nb > 1 else 0)) / (na + nb - 2)
    diff = a.mean() - b.mean()
    if pooled == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return float(diff / math.sqrt(pooled))


def two_prop_z(x1: int, n1: int, x2: int, n2: int):
    """Pooled two-proportion z-test: returns (z, two-tailed p)."""
    if n1 < 1 or n2 < 1:
        raise ValueError("both groups need at least one trial")
    p1, p2 = x1 / n1, x2 / n2
    pooled = (x1 + x2) / (n1 + n2)
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    if se == 0.0:
        return 0.0, 1.0
    z = (p1 - p2) / se
    return z, normal_two_tailed(z)


def cohen_h(p1: float, p2: float) -> float:
    for p in (p1, p2):
        if not 0.0 <= p <= 1.0:
            raise ValueError("proportions must lie in [0, 1]")
    return 2.0 * math.asin(math.sqrt(p1)) - 2.0 * math.asin(math.sqrt(p2))


def significance_marker(p: float, effect: float, kind: str = "d") -> str:
    """'**' / '*' / '' following the reporting thresholds for d or h."""
    e = abs(effect)
    if kind == "d":
        strong, weak = 1.0, 0.5
    elif kind == "h":
        strong, weak = 0.5, 0.2
    else:
        raise ValueError(f"unknown effect kind {kind!r}")
    if p < 0.01 and e > strong:
        return "**"
    if p < 0.05 and e > weak:
        return "*"
    return ""
