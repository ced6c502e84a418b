"""Toy datasets and CSV I/O."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .checkpoint import atomic_write_text
from .errors import ConfigError


class ParseError(ConfigError):
    pass


@dataclass
class Dataset:
    """Points (standardized when ``scaler`` is set) with disjoint splits.

    ``scaler`` is ``(mean, std)`` of the raw data; ``raw()`` undoes it.
    """

    points: np.ndarray
    splits: dict = field(default_factory=dict)
    scaler: tuple | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        if not self.splits:
            self.splits = {"train": np.arange(len(self.points))}

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)

    def split(self, name):
        return self.points[self.splits[name]]

    def raw(self):
        if self.scaler is None:
            return self.points.copy()
        mean, std = self.scaler
        return self.points * std + mean


def standardize(points):
    """Return ``(standardized, (mean, std))``; every dimension needs spread."""
    points = np.asarray(points, dtype=np.float64)
    mean = points.mean(axis=0)
    std = points.std(axis=0)
    if np.any(std <= 0):
        raise ConfigError("cannot standardize: a dimension has zero variance")
    return (points - mean) / std, (mean, std)


def with_splits(ds, rng, fractions=(0.8, 0.1, 0.1)):
    """Random disjoint train/validation/test split covering every point."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ConfigError("fractions must be three non-negative numbers summing to 1")
    n = len(ds)
    order = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    splits = {"train": np.sort(order[:n_train]),
              "validation": np.sort(order[n_train:n_train + n_val]),
              "test": np.sort(order[n_train + n_val:])}
    return replace(ds, splits=splits)


def _finish(raw, do_standardize, labels=None):
    if do_standardize:
        pts, scaler = standardize(raw)
        return Dataset(pts, scaler=scaler, labels=labels)
    return Dataset(raw, labels=labels)


def swiss_roll_curve(t):
    t = np.asarray(t, dtype=np.float64)
    return np.stack([t * np.cos(t), t * np.sin(t)], axis=-1)


SWISS_ROLL_RANGE = (1.5 * math.pi, 4.5 * math.pi)


def gen_swiss_roll(n, noise_std=0.0, rng=None, standardize=True, t=None):
    """2-D swiss roll ``(t cos t, t sin t)``, ``t ~ U[1.5 pi, 4.5 pi]``, plus jitter.

    The raw radius equals ``t`` when ``noise_std = 0``.  ``labels`` holds ``t``.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    if t is None:
        t = rng.uniform(*SWISS_ROLL_RANGE, size=n)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)).copy()
    raw = swiss_roll_curve(t) + noise_std * rng.standard_normal((n, 2))
    return _finish(raw, standardize, labels=t)


def gen_circle(n, radius=1.0, noise_std=0.0, rng=None, standardize=True):
    """Uniform-angle circle with Gaussian jitter; ``labels`` holds the angle."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    theta = rng.uniform(0.0, 2 * math.pi, size=n)
    raw = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    raw += noise_std * rng.standard_normal(raw.shape)
    return _finish(raw, standardize, labels=theta)


def gen_gmm(n, means, stds, weights, rng=None, standardize=True):
    """Gaussian mixture: component by categorical draw, then a normal draw.

    ``means`` is (k, d), or (k,) for one-dimensional data.  ``labels`` holds
    the component of every point.
    """
    means = np.asarray(means, dtype=np.float64)
    if means.ndim == 1:
        means = means[:, None]
    k, d = means.shape
    stds = np.broadcast_to(np.asarray(stds, dtype=np.float64).reshape(k, -1), (k, d))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (k,) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ConfigError("mixture weights must be a normalized vector, one per component")
    rng = np.random.default_rng() if rng is None else rng
    comp = rng.choice(k, size=n, p=weights)
    raw = means[comp] + stds[comp] * rng.standard_normal((n, d))
    return _finish(raw, standardize, labels=comp)


def gen_discrete(n, probs, rng=None):
    """Integer states drawn from ``probs`` (stored as a 1-column dataset)."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ConfigError("probs must be normalized")
    rng = np.random.default_rng() if rng is None else rng
    s = rng.choice(probs.size, size=n, p=probs)
    return Dataset(s[:, None].astype(np.float64), labels=s)


GENERATORS = ("swiss_roll", "circle", "gmm")


def generate(name, n, rng, noise_std=None):
    if name == "swiss_roll":
        return gen_swiss_roll(n, 0.5 if noise_std is None else noise_std, rng)
    if name == "circle":
        return gen_circle(n, 1.0, 0.05 if noise_std is None else noise_std, rng)
    if name == "gmm":
        s = 0.3 if noise_std is None else noise_std
        return gen_gmm(n, [-2.0, 2.0], [s, s], [0.5, 0.5], rng)
    raise ConfigError(f"unknown dataset {name!r}; expected one of {GENERATORS}")


# -- CSV ------------------------------------------------------------------------


def format_rows(points, header=False):
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    buf = io.StringIO()
    if header:
        buf.write(",".join(f"x{i}" for i in range(points.shape[1])) + "\n")
    for row in points:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def save_csv(dataset, path, header=False):
    points = dataset.points if isinstance(dataset, Dataset) else dataset
    atomic_write_text(path, format_rows(points, header))


def load_csv(path, header=None):
    """Read one point per row.

    ``header=None`` skips a first line that does not parse as numbers.
    """
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        try:
            row = [float(c) for c in cells]
        except ValueError:
            if lineno == 1 and header is not False:
                continue
            raise ParseError(f"{path}:{lineno}: malformed row {line!r}") from None
        if lineno == 1 and header:
            continue
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"{path}:{lineno}: row has {len(row)} values, expected {width}")
        rows.append(row)
    if not rows:
        raise ParseError(f"{path}: empty dataset")
    return Dataset(np.array(rows))
