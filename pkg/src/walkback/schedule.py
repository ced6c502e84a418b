"""Heating and cooling temperature schedules.

A heating schedule lists the temperature of each destructive step
``T_1 <= ... <= T_K``: ``n_flat`` steps at temperature 1 followed by the
heated steps.  Rules for the heated part:

``doubling``   2, 4, 8, ... up to the first power of two >= Tmax
``sqrt2``      sqrt(2)^1, sqrt(2)^2, ... up to the first value >= Tmax
``geometric``  factor^1, factor^2, ... up to the first value >= Tmax

Each step also carries a *level*: 0 for temperature-1 steps and ``i`` for
the ``i``-th heated step.  Levels index per-step network parameters, so all
temperature-1 steps share one operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

RULES = ("doubling", "sqrt2", "geometric")


@dataclass(frozen=True)
class TemperatureSchedule:
    temps: tuple
    levels: tuple
    n_flat: int
    Tmax: float
    mode: str = "heating"
    rule: str = "doubling"
    factor: float = 2.0

    @property
    def K(self):
        return len(self.temps)

    def __len__(self):
        return len(self.temps)

    def steps(self):
        """Yield ``(t, T_t, level_t)`` for t = 1..K in application order."""
        for t, (T, level) in enumerate(zip(self.temps, self.levels), start=1):
            yield t, T, level

    def to_dict(self):
        return {"temps": list(self.temps), "levels": list(self.levels), "n_flat": self.n_flat,
                "Tmax": self.Tmax, "mode": self.mode, "rule": self.rule, "factor": self.factor}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["temps"]), tuple(d["levels"]), d["n_flat"], d["Tmax"], d["mode"],
                   d["rule"], d["factor"])


def rule_factor(rule, factor=None):
    if rule == "doubling":
        return 2.0
    if rule == "sqrt2":
        return math.sqrt(2.0)
    if rule == "geometric":
        if factor is None or not factor > 1.0:
            raise ConfigError("geometric rule needs a factor > 1")
        return float(factor)
    raise ConfigError(f"unknown schedule rule {rule!r}; expected one of {RULES}")


def n_heated(Tmax, rule="doubling", factor=None):
    """Number of heated steps needed to reach ``Tmax``."""
    if not Tmax >= 1.0:
        raise ConfigError(f"Tmax must be >= 1, got {Tmax}")
    f = rule_factor(rule, factor)
    if rule == "doubling":
        return math.ceil(math.log2(Tmax))
    m = math.log(Tmax) / math.log(f)
    # absorb rounding noise such as log(1.1**30)/log(1.1) = 30.000000000000004
    return math.ceil(m - 1e-9)


def make_heating(Tmax, n_flat, rule="doubling", factor=None):
    if not Tmax >= 1.0:
        raise ConfigError(f"Tmax must be >= 1, got {Tmax}")
    if n_flat < 0:
        raise ConfigError("n_flat must be >= 0")
    f = rule_factor(rule, factor)
    m = n_heated(Tmax, rule, factor)
    if rule == "doubling":
        heated = [float(2 ** i) for i in range(1, m + 1)]
    elif rule == "sqrt2":
        heated = [math.sqrt(2.0 ** i) for i in range(1, m + 1)]
    else:
        heated = [f ** i for i in range(1, m + 1)]
    temps = (1.0,) * n_flat + tuple(heated)
    levels = (0,) * n_flat + tuple(range(1, m + 1))
    return TemperatureSchedule(temps, levels, int(n_flat), float(Tmax), "heating", rule, f)


def make_cooling(heating, extra_flat=0):
    """Exact reversal of ``heating``, optionally followed by extra T=1 steps."""
    if extra_flat < 0:
        raise ConfigError("extra_flat must be >= 0")
    mode = "cooling" if heating.mode == "heating" else "heating"
    temps = tuple(reversed(heating.temps))
    levels = tuple(reversed(heating.levels))
    if extra_flat:
        if mode != "cooling":
            raise ConfigError("extra flat steps only extend a cooling schedule")
        temps += (1.0,) * extra_flat
        levels += (0,) * extra_flat
    return TemperatureSchedule(temps, levels, heating.n_flat + extra_flat, heating.Tmax, mode,
                               heating.rule, heating.factor)


def draw_k(N1, Tmax, rng, rule="doubling", factor=None):
    """Draw ``n`` uniformly from {0..N1}; return ``(n, K)`` with K = heated steps + n."""
    if N1 < 0:
        raise ConfigError("N1 must be >= 0")
    n = int(rng.integers(0, N1 + 1))
    return n, n_heated(Tmax, rule, factor) + n


def tmax_from_variance(sigma2_max, sigma2):
    """``Tmax = sigma2_max / sigma2`` (clipped below at 1)."""
    if sigma2 <= 0:
        raise ConfigError("base variance must be positive")
    return max(float(sigma2_max) / float(sigma2), 1.0)


def total_variance(points):
    """Total (summed per-dimension) variance of a point cloud."""
    return float(np.asarray(points, dtype=np.float64).var(axis=0).sum())
