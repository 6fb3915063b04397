"""Built-in approximation targets.

Every target maps an ``(m, d)`` array of points to ``m`` values.  The
lacunary series have a prescribed roughness exponent on every dyadic scale
above their cutoff, which makes their approximation rates predictable.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

_PHASES = np.array([0.3, 1.7, 2.9, 0.8, 4.1, 5.3, 2.2, 3.6, 0.1, 1.2, 4.8, 5.9,
                    2.7, 3.3, 0.6, 1.9, 4.4, 5.1, 2.5, 3.9])


def polynomial(coef: Sequence[float] = (0.5, -1.0, 2.0)) -> Callable:
    """``sum_i coef[i] x_1^i``."""
    c = np.asarray(coef, float)
    return lambda x: np.polyval(c[::-1], np.asarray(x)[:, 0])


def lacunary_1d(sigma: float, terms: int = 14) -> Callable:
    """``sum_k 2^(-sigma k) sin(2 pi 2^k x + phase_k)`` for ``k < terms``."""
    ks = np.arange(terms)
    amp = 2.0 ** (-sigma * ks)
    freq = 2 * np.pi * 2.0 ** ks
    ph = _PHASES[:terms]

    def f(x):
        t = np.asarray(x)[:, 0]
        return np.sin(np.multiply.outer(t, freq) + ph) @ amp
    return f


def lacunary_sum(sigma: Sequence[float], terms: int = 14) -> Callable:
    """Sum over axes of :func:`lacunary_1d` with axis-specific exponents."""
    parts = [lacunary_1d(s, terms) for s in sigma]

    def f(x):
        x = np.asarray(x)
        return sum(p(x[:, [l]]) for l, p in enumerate(parts))
    return f


def step(at: float = 1 / 3) -> Callable:
    return lambda x: (np.asarray(x)[:, 0] > at).astype(float) * (1.0 + np.asarray(x)[:, 0])


def kink(at: float = 1 / 3) -> Callable:
    return lambda x: np.abs(np.asarray(x)[:, 0] - at)


def spike(center: float = 0.37, width: float = 0.05) -> Callable:
    def f(x):
        x = np.asarray(x)
        r2 = np.sum((x - center) ** 2, axis=1) / width ** 2
        return np.exp(-r2)
    return f


def smooth(d: int = 1) -> Callable:
    return lambda x: np.prod(np.exp(np.asarray(x)) * np.cos(2 * np.asarray(x)), axis=1)


BUILTIN = {
    "poly": lambda d: polynomial(),
    "lacunary": lambda d: lacunary_sum([1.5] * d),
    "step": lambda d: step(),
    "kink": lambda d: kink(),
    "spike": lambda d: spike(),
    "smooth": lambda d: smooth(d),
}


def builtin(name: str, d: int, sigma: Sequence[float] | None = None) -> Callable:
    """Look up a built-in target; ``lacunary`` honours ``sigma`` when given."""
    if name == "lacunary" and sigma is not None:
        return lacunary_sum(sigma)
    try:
        return BUILTIN[name](d)
    except KeyError:
        raise KeyError(f"unknown target {name!r}; choose from {sorted(BUILTIN)}") from None


def sup_bound(sigma: float, terms: int = 14) -> float:
    return float(sum(2.0 ** (-sigma * k) for k in range(terms)))


__all__ = ["polynomial", "lacunary_1d", "lacunary_sum", "step", "kink", "spike",
           "smooth", "builtin", "BUILTIN", "sup_bound"]
