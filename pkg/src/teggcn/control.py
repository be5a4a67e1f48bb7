"""Transfer-entropy feature correction for heterophilous, high-degree nodes.

On scheduled epochs the controller

1. scores node heterophily from the available labels,
2. keeps the most heterophilous ``het_fraction`` of nodes and, of those, the
   ``degree_fraction`` with the highest degree,
3. estimates ``TE(neighbor -> node)`` on raw input feature vectors for every
   selected node and keeps the maximum over its neighbors,
4. adds that maximum to every component of the node's row in the output of
   the last convolution until the next scheduled epoch.

The added values are constants: no gradient flows into the estimator.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .graph import Graph, HeterophilyStats, LabelSource, node_heterophily
from .te import TEConfig, te_ksg_many

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TEControlConfig:
    enabled: bool = True
    het_fraction: float = 0.05
    degree_fraction: float = 0.10
    period_epochs: int = 10
    lag: int = 1
    label_source: LabelSource = LabelSource.TRAIN_PLUS_PREDICTIONS
    max_neighbors: int = 256
    k_neighbors: int = 3
    reuse_pair_values: bool = True

    def __post_init__(self):
        object.__setattr__(self, "label_source", LabelSource(self.label_source))
        for f in ("het_fraction", "degree_fraction"):
            v = getattr(self, f)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{f} must lie in (0, 1], got {v}")
        if self.period_epochs < 1:
            raise ValueError("period_epochs must be >= 1")
        if self.max_neighbors < 1:
            raise ValueError("max_neighbors must be >= 1")

    @property
    def estimator(self) -> TEConfig:
        return TEConfig(k_lag=self.lag, l_lag=self.lag, k_neighbors=self.k_neighbors)


@dataclass(frozen=True)
class SelectionResult:
    selected: np.ndarray
    heterophily_used: HeterophilyStats
    epoch: int = 0
    candidates: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


@dataclass
class TECorrection:
    per_node_te: dict
    computed_at_epoch: int = 0

    def offsets(self, num_nodes: int, dtype=np.float64) -> np.ndarray:
        out = np.zeros((num_nodes, 1), dtype=dtype)
        for i, v in self.per_node_te.items():
            if not 0 <= i < num_nodes:
                raise IndexError(f"correction for node {i} outside [0, {num_nodes})")
            out[i, 0] = v
        return out


def selection_sizes(num_nodes: int, cfg: TEControlConfig) -> tuple[int, int]:
    stage1 = max(1, math.ceil(cfg.het_fraction * num_nodes))
    return stage1, max(1, math.ceil(cfg.degree_fraction * stage1))


def select_nodes(het: HeterophilyStats, degrees, cfg: TEControlConfig,
                 epoch: int = 0) -> SelectionResult:
    """Top heterophily first, then top degree within that subset.

    Ties in heterophily go to the higher degree, then the lower index. The
    result is ordered by (degree desc, index asc).
    """
    h = np.asarray(het.per_node)
    deg = np.asarray(degrees)
    n = h.size
    if n < 1:
        raise ValueError("cannot select from an empty graph")
    k1, k2 = selection_sizes(n, cfg)
    idx = np.arange(n)
    stage1 = np.lexsort((idx, -deg, -h))[:k1]
    order = np.lexsort((stage1, -deg[stage1]))
    chosen = stage1[order][:k2]
    return SelectionResult(chosen.astype(np.int64), het, epoch, np.sort(stage1))


def neighbor_subset(g: Graph, i: int, max_neighbors: int) -> np.ndarray:
    nb = g.neighbors(i)
    if nb.size <= max_neighbors:
        return nb
    order = np.lexsort((nb, -g.degrees[nb]))
    return nb[order[:max_neighbors]]


def node_te(g: Graph, input_features, node_i: int, estimator_cfg: TEConfig = TEConfig(),
            max_neighbors: int = 256, seed: int = 0, cache: Optional[dict] = None):
    """Largest ``TE(neighbor -> node_i)`` over the node's (capped) neighbor set.

    Each feature vector is read as a series in feature order. Pairs with a
    constant vector on either side contribute 0. Returns ``(max_te, pairs)``
    where ``pairs`` is the number of neighbor pairs evaluated; an isolated
    node yields ``(0.0, 0)``. ``cache`` memoizes pair values, which depend only
    on the inputs and the seed.
    """
    x = np.asarray(input_features, dtype=np.float64)
    nb = neighbor_subset(g, node_i, max_neighbors)
    if nb.size == 0:
        return 0.0, 0
    need = estimator_cfg.k_neighbors + 2 + max(estimator_cfg.k_lag, estimator_cfg.l_lag)
    if x.shape[1] < need:
        raise ValueError(f"feature vectors of length {x.shape[1]} are too short for the "
                         f"estimator (need {need})")
    cache = {} if cache is None else cache
    values = np.zeros(nb.size)
    target = x[node_i]
    todo = [k for k, j in enumerate(nb) if (node_i, int(j)) not in cache]
    live = [k for k in todo if np.ptp(x[nb[k]]) > 0] if np.ptp(target) > 0 else []
    for k in todo:
        cache[(node_i, int(nb[k]))] = 0.0
    if live:
        est = te_ksg_many(target, x[nb[live]], estimator_cfg, target_key=(seed, node_i, 0),
                          source_keys=[(seed, int(nb[k]), 1) for k in live])
        for k, v in zip(live, est):
            cache[(node_i, int(nb[k]))] = float(v)
    for k, j in enumerate(nb):
        values[k] = cache[(node_i, int(j))]
    return float(values.max()), int(nb.size)


def apply_correction(h, corrections):
    """Add each selected node's TE value to every component of its row."""
    h = ad.as_tensor(h)
    if isinstance(corrections, TECorrection):
        if not corrections.per_node_te:
            return h
        off = corrections.offsets(h.shape[0], h.dtype)
    else:
        off = np.asarray(corrections, dtype=h.dtype).reshape(-1, 1)
        if off.shape[0] != h.shape[0]:
            raise IndexError(f"correction has {off.shape[0]} rows, representation has {h.shape[0]}")
    return ad.add(h, off)


def should_run(epoch: int, cfg: TEControlConfig) -> bool:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.enabled and epoch % cfg.period_epochs == 0


def labels_for_heterophily(g: Graph, predictions, source: LabelSource) -> np.ndarray:
    """Training labels plus predictions elsewhere, or the full label vector."""
    if LabelSource(source) is LabelSource.FULL_LABELS:
        return g.labels
    if predictions is None:
        raise ValueError("train_plus_predictions needs model predictions")
    view = np.array(predictions, dtype=np.int64, copy=True)
    view[g.train_mask] = g.labels[g.train_mask]
    return view


class TEController:
    """Schedules selection and TE estimation and keeps the active correction.

    Every scheduled computation appends one record to :attr:`records` and,
    when ``log_path`` is set, one JSON line to that file.
    """

    def __init__(self, g: Graph, cfg: TEControlConfig, seed: int = 0,
                 log_path=None):
        self.graph = g
        self.cfg = cfg
        self.seed = seed
        self.log_path = log_path
        self.current: Optional[TECorrection] = None
        self.last_selection: Optional[SelectionResult] = None
        self.records: list[dict] = []
        self.wall_time = 0.0
        self.calls = 0
        self.estimator_runs = 0
        self._cache: dict = {}

    def update(self, epoch: int, predictions=None) -> Optional[TECorrection]:
        if not should_run(epoch, self.cfg):
            return self.current
        t0 = time.perf_counter()
        g = self.graph
        labels = labels_for_heterophily(g, predictions, self.cfg.label_source)
        het = node_heterophily(g, labels, self.cfg.label_source)
        sel = select_nodes(het, g.degrees, self.cfg, epoch)
        if not self.cfg.reuse_pair_values:
            self._cache = {}
        before = len(self._cache)
        per_node, calls = {}, 0
        for i in sel.selected:
            value, pairs = node_te(g, g.features, int(i), self.cfg.estimator,
                                   self.cfg.max_neighbors, self.seed, self._cache)
            per_node[int(i)] = value
            calls += pairs
        elapsed = time.perf_counter() - t0
        self.estimator_runs += len(self._cache) - before
        self.calls += calls
        self.wall_time += elapsed
        self.current = TECorrection(per_node, epoch)
        self.last_selection = sel
        record = dict(epoch=epoch, selected=[int(i) for i in sel.selected],
                      max_te={str(k): v for k, v in per_node.items()},
                      te_calls=calls, wall_s=elapsed)
        self.records.append(record)
        if self.log_path is not None:
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
        log.debug("TE epoch %d: %d nodes, %d pairs, %.3fs", epoch, len(per_node), calls, elapsed)
        return self.current
