"""Transfer entropy ``TE(Y -> X)`` between two scalar series.

Two estimators share one history embedding:

* :func:`te_plugin` - equal-width binning and direct counting. Exact for
  discrete data at large sample sizes and used as the reference.
* :func:`te_ksg` - Kraskov-Stoegbauer-Grassberger conditional mutual
  information with Chebyshev K-D tree searches.

Values are in nats unless ``log_base="base2"``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma

from .kdtree import KDTree

TIE_NOISE = 1e-10


class DegenerateSeries(ValueError):
    """Raised when a series has zero range and the KSG metric space collapses."""


@dataclass(frozen=True)
class TEConfig:
    k_lag: int = 1
    l_lag: int = 1
    k_neighbors: int = 3
    log_base: str = "natural"

    def __post_init__(self):
        if self.k_lag < 1 or self.l_lag < 1:
            raise ValueError("history lengths must be >= 1")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.log_base not in ("natural", "base2"):
            raise ValueError(f"unknown log_base {self.log_base!r}")

    def convert(self, nats: float) -> float:
        return nats / np.log(2.0) if self.log_base == "base2" else nats


@dataclass(frozen=True)
class SeriesPair:
    """Target series ``x`` and source series ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).ravel()
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if x.shape != y.shape:
            raise ValueError(f"series lengths differ: {x.size} vs {y.size}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class EmbeddedSeries:
    x_next: np.ndarray
    x_hist: np.ndarray
    y_hist: np.ndarray
    k_lag: int
    l_lag: int

    def __len__(self):
        return self.x_next.shape[0]

    @property
    def samples(self):
        return [(float(a), list(b), list(c))
                for a, b, c in zip(self.x_next, self.x_hist, self.y_hist)]


def _lagged(s: np.ndarray, lag: int, first: int, count: int) -> np.ndarray:
    # columns ordered oldest to newest; row r ends at time first + r
    cols = [s[first - lag + 1 + j: first - lag + 1 + j + count] for j in range(lag)]
    return np.stack(cols, axis=1)


def embed(pair: SeriesPair, cfg: TEConfig = TEConfig()) -> EmbeddedSeries:
    """Align ``(x[t+1], x[t-k+1..t], y[t-l+1..t])`` tuples.

    A length-n series yields ``n - max(k, l)`` samples.
    """
    n = pair.x.size
    lag = max(cfg.k_lag, cfg.l_lag)
    if n < lag + 2:
        raise ValueError(f"series of length {n} too short for history {lag}; need {lag + 2}")
    count = n - lag
    first = lag - 1
    return EmbeddedSeries(pair.x[first + 1: first + 1 + count].copy(),
                          _lagged(pair.x, cfg.k_lag, first, count),
                          _lagged(pair.y, cfg.l_lag, first, count),
                          cfg.k_lag, cfg.l_lag)


def _bin_columns(cols: np.ndarray, num_bins: int) -> np.ndarray:
    lo = cols.min(axis=0)
    span = cols.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    b = np.floor((cols - lo) / safe * num_bins).astype(np.int64)
    b = np.clip(b, 0, num_bins - 1)
    b[:, span == 0] = 0
    return b


def _codes(block: np.ndarray) -> np.ndarray:
    if block.shape[1] == 0:
        return np.zeros(block.shape[0], np.int64)
    return np.unique(block, axis=0, return_inverse=True)[1].ravel()


def te_plugin(pair: SeriesPair, cfg: TEConfig = TEConfig(), num_bins: int = 2) -> float:
    """Histogram (plug-in) transfer entropy.

    Every embedded coordinate is cut into ``num_bins`` equal-width bins over
    its observed range; probabilities are relative frequencies.
    """
    emb = embed(pair, cfg)
    m = len(emb)
    if m < 8:
        raise ValueError(f"te_plugin needs at least 8 embedded samples, got {m}")
    cols = np.column_stack([emb.x_next, emb.x_hist, emb.y_hist])
    bins = _bin_columns(cols, num_bins)
    k = cfg.k_lag
    a = bins[:, :1]
    b = bins[:, 1:1 + k]
    c = bins[:, 1 + k:]
    abc = _codes(bins)
    ab = _codes(np.hstack([a, b]))
    bc = _codes(np.hstack([b, c]))
    bb = _codes(b)
    n_abc = np.bincount(abc)
    n_ab = np.bincount(ab)
    n_bc = np.bincount(bc)
    n_b = np.bincount(bb)
    # one representative sample per observed joint state
    states, first = np.unique(abc, return_index=True)
    p = n_abc[states] / m
    ratio = (n_abc[states] * n_b[bb[first]]) / (n_ab[ab[first]] * n_bc[bc[first]])
    return cfg.convert(float(np.sum(p * np.log(ratio))))


def _jitter(series: np.ndarray, key) -> np.ndarray:
    rng = np.random.default_rng(key)
    return series + TIE_NOISE * rng.uniform(-1.0, 1.0, series.size)


def _ksg(emb: EmbeddedSeries, k: int, target_trees=None) -> float:
    if len(emb) < k + 2:
        raise ValueError(f"te_ksg needs at least {k + 2} embedded samples, got {len(emb)}")
    nxt = emb.x_next[:, None]
    if target_trees is None:
        target_trees = (KDTree(emb.x_hist), KDTree(np.hstack([nxt, emb.x_hist])))
    z_tree, xz_tree = target_trees
    eps = KDTree(np.hstack([nxt, emb.x_hist, emb.y_hist])).kth_neighbor_distances(k)
    n_z = z_tree.count_around_points(eps) + 1
    n_xz = xz_tree.count_around_points(eps) + 1
    n_yz = KDTree(np.hstack([emb.x_hist, emb.y_hist])).count_around_points(eps) + 1
    return float(digamma(k) + np.mean(digamma(n_z) - digamma(n_xz) - digamma(n_yz)))


def te_ksg(pair: SeriesPair, cfg: TEConfig = TEConfig(), seed: int = 0) -> float:
    """KSG estimate of transfer entropy (strict counts, single radius).

    ``psi(k) + < psi(n_z) - psi(n_xz) - psi(n_yz) >`` where ``z`` is the target
    history, ``x`` the next target value and ``y`` the source history; every
    count includes the centre point. Ties are broken by uniform noise of
    amplitude 1e-10 drawn from ``seed``. The result is not clamped and may be
    slightly negative.
    """
    if np.ptp(pair.x) == 0 or np.ptp(pair.y) == 0:
        raise DegenerateSeries("te_ksg is undefined for a constant series")
    emb = embed(SeriesPair(_jitter(pair.x, (seed, 0)), _jitter(pair.y, (seed, 1))), cfg)
    return cfg.convert(_ksg(emb, cfg.k_neighbors))


def te_ksg_many(x, sources, cfg: TEConfig = TEConfig(), target_key=(0, 0),
                source_keys=None) -> np.ndarray:
    """KSG transfer entropy from each row of ``sources`` into one target ``x``.

    The target-only search trees are built once. Tie-breaking noise for the
    target is drawn from ``target_key`` and for source ``j`` from
    ``source_keys[j]``; with keys ``(s, 0)`` and ``(s, 1)`` the result matches
    ``te_ksg(SeriesPair(x, y), cfg, seed=s)`` bit for bit.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    sources = np.atleast_2d(np.asarray(sources, dtype=np.float64))
    if source_keys is None:
        source_keys = [(j, 1) for j in range(sources.shape[0])]
    if np.ptp(x) == 0:
        raise DegenerateSeries("te_ksg is undefined for a constant series")
    xj = _jitter(x, target_key)
    trees = None
    out = np.empty(sources.shape[0])
    for j, (ys, key) in enumerate(zip(sources, source_keys)):
        if np.ptp(ys) == 0:
            raise DegenerateSeries(f"source {j} is constant")
        emb = embed(SeriesPair(xj, _jitter(ys, key)), cfg)
        if trees is None:
            trees = (KDTree(emb.x_hist), KDTree(np.hstack([emb.x_next[:, None], emb.x_hist])))
        out[j] = cfg.convert(_ksg(emb, cfg.k_neighbors, trees))
    return out
