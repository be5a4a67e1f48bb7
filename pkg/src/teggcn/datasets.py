"""Plain-text dataset loaders, split handling and a synthetic graph generator.

Two on-disk families are supported:

``<name>.content`` / ``<name>.cites``
    Cora, Citeseer, Pubmed. Whitespace separated; a content line is
    ``node-id f1 ... fF label`` and a cites line is ``citing-id cited-id``.

``out1_node_feature_label.txt`` / ``out1_graph_edges.txt``
    The WebKB, Wikipedia and Actor graphs. Tab separated with one header
    line; features are comma separated (Actor lists active indices).

Split files are named ``<name>_split_<i>.txt`` and hold three lines of node
indices: train, validation, test.
"""
from __future__ import annotations

import logging
import pickle
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import Graph, build_graph

log = logging.getLogger(__name__)

CONTENT_CITES = ("cora", "citeseer", "pubmed")
GEOM_TEXT = ("texas", "wisconsin", "actor", "squirrel", "chameleon", "cornell")
KNOWN_DATASETS = GEOM_TEXT + ("citeseer", "pubmed", "cora")
ALIASES = {"film": "actor"}
SPARSE_FEATURE_DIMS = {"actor": 932}
DEFAULT_PROPORTIONS = (0.48, 0.32, 0.20)

# Published dataset characteristics: homophily level, classes, nodes, edges,
# and mean accuracy +- stdev (TE-GGCN, GGCN) over 10 runs.
REFERENCE_TABLE = {
    "texas": dict(h=0.11, classes=5, nodes=183, edges=295, te=(84.86, 4.55), ggcn=(83.51, 3.72)),
    "wisconsin": dict(h=0.21, classes=5, nodes=251, edges=466, te=(87.45, 3.70), ggcn=(86.47, 3.29)),
    "actor": dict(h=0.22, classes=5, nodes=7600, edges=26752, te=(37.50, 1.57), ggcn=(37.56, 1.55)),
    "squirrel": dict(h=0.22, classes=5, nodes=5201, edges=198493, te=(55.04, 1.64), ggcn=(55.51, 2.06)),
    "chameleon": dict(h=0.23, classes=5, nodes=2277, edges=31421, te=(71.14, 1.84), ggcn=(70.57, 1.84)),
    "cornell": dict(h=0.30, classes=5, nodes=183, edges=280, te=(85.68, 6.63), ggcn=(84.32, 6.63)),
    "citeseer": dict(h=0.74, classes=7, nodes=3327, edges=4676, te=(77.14, 1.45), ggcn=(76.51, 1.45)),
    "pubmed": dict(h=0.80, classes=3, nodes=19717, edges=44327, te=(89.08, 0.37), ggcn=(89.12, 0.32)),
    "cora": dict(h=0.81, classes=6, nodes=2708, edges=5278, te=(87.95, 1.05), ggcn=(84.32, 1.05)),
}


class DatasetFormatError(ValueError):
    pass


class DatasetWarning(UserWarning):
    """Data was dropped or altered while loading; ``count`` says how much."""

    def __init__(self, message: str, count: int = 0):
        super().__init__(message)
        self.count = count


def _warn(message: str, count: int):
    log.warning(message)
    warnings.warn(DatasetWarning(message, count), stacklevel=3)


def canonical_name(name: str) -> str:
    key = ALIASES.get(name.lower(), name.lower())
    if key not in KNOWN_DATASETS:
        raise ValueError(f"unknown dataset {name!r}; expected one of {', '.join(KNOWN_DATASETS)}")
    return key


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    root_dir: Path
    split_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "name", canonical_name(self.name))
        object.__setattr__(self, "root_dir", Path(self.root_dir))
        if not 0 <= self.split_index < 10:
            raise ValueError(f"split_index must lie in [0, 10), got {self.split_index}")


@dataclass(frozen=True)
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    source: str = "file"
    seed: Optional[int] = None

    def as_tuple(self):
        return self.train, self.val, self.test


def dataset_dir(root_dir, name: str) -> Path:
    root = Path(root_dir)
    for cand in (root / name, root / name.capitalize(), root / ALIASES.get(name, name)):
        if cand.is_dir():
            return cand
    return root


def _drop_self_loops(pairs: list, where: str) -> list:
    kept = [(u, v) for u, v in pairs if u != v]
    if len(kept) != len(pairs):
        _warn(f"{where}: dropped {len(pairs) - len(kept)} self-loop edges", len(pairs) - len(kept))
    return kept


def load_content_cites(root_dir, name: str) -> Graph:
    """Load a ``.content`` / ``.cites`` pair into a :class:`Graph`.

    Node ids keep the order of the content file; label tokens are numbered by
    first appearance. Citations naming an unknown node are dropped with a
    :class:`DatasetWarning`.
    """
    d = Path(root_dir)
    content, cites = d / f"{name}.content", d / f"{name}.cites"
    index: dict[str, int] = {}
    classes: dict[str, int] = {}
    rows, labels = [], []
    width = None
    with open(content) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise DatasetFormatError(f"{content}:{lineno}: expected id, features, label")
            node, feats, label = parts[0], parts[1:-1], parts[-1]
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise DatasetFormatError(f"{content}:{lineno}: {len(feats)} features, "
                                         f"expected {width}")
            if node in index:
                raise DatasetFormatError(f"{content}:{lineno}: duplicate node id {node!r}")
            try:
                rows.append([float(v) for v in feats])
            except ValueError as err:
                raise DatasetFormatError(f"{content}:{lineno}: {err}") from None
            index[node] = len(index)
            labels.append(classes.setdefault(label, len(classes)))

    pairs, unknown = [], 0
    with open(cites) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DatasetFormatError(f"{cites}:{lineno}: expected two node ids")
            a, b = parts
            if a not in index or b not in index:
                unknown += 1
                continue
            pairs.append((index[a], index[b]))
    if unknown:
        _warn(f"{cites}: dropped {unknown} citations referencing unknown node ids", unknown)
    pairs = _drop_self_loops(pairs, str(cites))
    n = len(index)
    feats = np.array(rows, dtype=np.float64).reshape(n, width or 0)
    return build_graph(np.array(pairs, dtype=np.int64).reshape(-1, 2), n, feats,
                       np.array(labels, dtype=np.int64), name=name)


def _read_table(path: Path, columns: int) -> list[tuple[int, list[str]]]:
    out = []
    with open(path) as fh:
        header = fh.readline()
        first = header.strip().split("\t")[0] if header.strip() else ""
        if not header.strip() or first.lstrip("-").isdigit():
            raise DatasetFormatError(f"{path}:1: header line missing")
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != columns:
                raise DatasetFormatError(f"{path}:{lineno}: expected {columns} tab-separated "
                                         f"fields, got {len(parts)}")
            out.append((lineno, parts))
    return out


def load_geom_text(root_dir, name: str, feature_dim: Optional[int] = None) -> Graph:
    """Load the tab-separated node/edge files used by the WebKB-style graphs.

    For Actor the feature field lists active indices and is expanded to a
    binary vector of ``feature_dim`` entries (932 by default).
    """
    d = Path(root_dir)
    node_path, edge_path = d / "out1_node_feature_label.txt", d / "out1_graph_edges.txt"
    records = _read_table(node_path, 3)
    sparse = name in SPARSE_FEATURE_DIMS
    dim = feature_dim or SPARSE_FEATURE_DIMS.get(name, 0)

    ids, labels, feats = [], [], []
    for lineno, (node, fstr, lab) in records:
        try:
            ids.append(int(node))
        except ValueError:
            raise DatasetFormatError(f"{node_path}:{lineno}: node id {node!r} is not an integer") from None
        try:
            labels.append(int(lab))
        except ValueError:
            raise DatasetFormatError(f"{node_path}:{lineno}: label {lab!r} is not an integer") from None
        fields = [t for t in fstr.split(",") if t.strip()]
        try:
            feats.append([int(t) for t in fields] if sparse else [float(t) for t in fields])
        except ValueError as err:
            raise DatasetFormatError(f"{node_path}:{lineno}: {err}") from None

    n = len(ids)
    if sorted(ids) == list(range(n)):
        index = {i: i for i in ids}
    else:
        index = {}
        for i in ids:
            index.setdefault(i, len(index))
    if sparse:
        x = np.zeros((n, dim))
        for node, active in zip(ids, feats):
            if active and (min(active) < 0 or max(active) >= dim):
                raise DatasetFormatError(f"{node_path}: feature index outside [0, {dim})")
            x[index[node], active] = 1.0
    else:
        widths = {len(f) for f in feats}
        if len(widths) > 1:
            raise DatasetFormatError(f"{node_path}: rows have differing feature counts {sorted(widths)}")
        x = np.zeros((n, widths.pop() if widths else 0))
        for node, row in zip(ids, feats):
            x[index[node]] = row
    y = np.empty(n, dtype=np.int64)
    for node, lab in zip(ids, labels):
        y[index[node]] = lab

    pairs, unknown = [], 0
    for lineno, (a, b) in _read_table(edge_path, 2):
        try:
            a, b = int(a), int(b)
        except ValueError:
            raise DatasetFormatError(f"{edge_path}:{lineno}: node ids must be integers") from None
        if a not in index or b not in index:
            unknown += 1
            continue
        pairs.append((index[a], index[b]))
    if unknown:
        _warn(f"{edge_path}: dropped {unknown} edges referencing unknown node ids", unknown)
    pairs = _drop_self_loops(pairs, str(edge_path))
    return build_graph(np.array(pairs, dtype=np.int64).reshape(-1, 2), n, x, y, name=name)


def load_dataset(root_dir, name: str) -> Graph:
    """Load any of the nine known datasets from ``root_dir`` (or ``root_dir/<name>``)."""
    name = canonical_name(name)
    d = dataset_dir(root_dir, name)
    if name in CONTENT_CITES:
        return load_content_cites(d, name)
    return load_geom_text(d, name)


# -- splits ----------------------------------------------------------------

def split_path(root_dir, name: str, split_index: int) -> Path:
    d = dataset_dir(root_dir, name)
    for cand in (d / f"{name}_split_{split_index}.txt", d / "splits" / f"{name}_split_{split_index}.txt"):
        if cand.exists():
            return cand
    return d / f"{name}_split_{split_index}.txt"


def read_split_file(path, num_nodes: int) -> Splits:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if len(lines) != 3:
        raise DatasetFormatError(f"{path}: expected 3 lines (train, val, test), got {len(lines)}")
    masks = []
    for lineno, line in enumerate(lines, 1):
        try:
            idx = np.array([int(t) for t in line.split()], dtype=np.int64)
        except ValueError as err:
            raise DatasetFormatError(f"{path}:{lineno}: {err}") from None
        if idx.size and (idx.min() < 0 or idx.max() >= num_nodes):
            raise DatasetFormatError(f"{path}:{lineno}: node index outside [0, {num_nodes})")
        m = np.zeros(num_nodes, bool)
        m[idx] = True
        masks.append(m)
    tr, va, te = masks
    if (tr & va).any() or (tr & te).any() or (va & te).any():
        raise DatasetFormatError(f"{path}: partitions share nodes")
    return Splits(tr, va, te, source="file")


def write_split_file(path, splits: Splits):
    with open(path, "w") as fh:
        for m in splits.as_tuple():
            fh.write(" ".join(str(i) for i in np.flatnonzero(m)) + "\n")


def load_splits(root_dir, name: str, split_index: int, graph: Graph, seed: int = 0,
                proportions: Sequence[float] = DEFAULT_PROPORTIONS) -> Splits:
    """Read split ``split_index``; generate a stratified one if the file is absent.

    The returned :attr:`Splits.source` records which path was taken.
    """
    path = split_path(root_dir, name, split_index)
    if path.exists():
        return read_split_file(path, graph.num_nodes)
    log.info("no split file at %s; generating with seed %d", path, seed)
    return generate_splits(graph, proportions, seed)


def _half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def generate_splits(g: Graph, proportions: Sequence[float] = DEFAULT_PROPORTIONS,
                    seed: int = 0) -> Splits:
    """Stratified random train/val/test assignment.

    Within each class the train and validation sizes are the proportional
    counts rounded half-up; the remainder goes to test. Unlabelled nodes are
    left out of every mask.
    """
    p = np.asarray(proportions, dtype=np.float64)
    if p.shape != (3,) or (p < 0).any() or not np.isclose(p.sum(), 1.0):
        raise ValueError(f"proportions must be three non-negative values summing to 1, got {proportions}")
    rng = np.random.default_rng(seed)
    n = g.num_nodes
    masks = [np.zeros(n, bool) for _ in range(3)]
    parts = int((p > 0).sum())
    small = []
    for c in np.unique(g.labels[g.labels >= 0]):
        members = np.flatnonzero(g.labels == c)
        members = members[rng.permutation(members.size)]
        if members.size < parts:
            masks[0][members] = True
            small.append(int(c))
            continue
        n_tr = min(_half_up(p[0] * members.size), members.size)
        n_va = min(_half_up(p[1] * members.size), members.size - n_tr)
        if p[2] == 0:
            n_va = members.size - n_tr
        masks[0][members[:n_tr]] = True
        masks[1][members[n_tr:n_tr + n_va]] = True
        masks[2][members[n_tr + n_va:]] = True
    if small:
        _warn(f"classes {small} have fewer nodes than partitions; all assigned to train",
              len(small))
    return Splits(*masks, source="generated", seed=seed)


# -- synthetic graphs ------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    num_nodes: int = 500
    num_classes: int = 2
    mean_degree: float = 5.0
    target_homophily: float = 0.5
    feature_dim: int = 16
    class_signal: float = 1.0
    seed: int = 0


def generate_synthetic(spec: SynthSpec, proportions: Sequence[float] = DEFAULT_PROPORTIONS) -> Graph:
    """Block-model graph whose edge homophily tracks ``target_homophily``.

    Each edge joins a random node to a same-class partner with probability
    ``target_homophily`` and to a different-class partner otherwise. Features
    are ``class_signal * mu_c + N(0, 1)`` with ``mu_c ~ N(0, I)``. Masks come
    from :func:`generate_splits` with the same seed.
    """
    n, c = spec.num_nodes, spec.num_classes
    if n < 2 or c < 1:
        raise ValueError("need at least 2 nodes and 1 class")
    if not 0.0 <= spec.target_homophily <= 1.0:
        raise ValueError("target_homophily must lie in [0, 1]")
    if spec.mean_degree <= 0 or spec.mean_degree > n - 1:
        raise ValueError(f"mean_degree {spec.mean_degree} infeasible for {n} nodes")
    if c == 1 and spec.target_homophily < 1.0:
        raise ValueError("a single class cannot produce heterophilous edges")
    rng = np.random.default_rng(spec.seed)
    labels = rng.permutation(np.arange(n) % c)
    members = [np.flatnonzero(labels == k) for k in range(c)]
    others = [np.flatnonzero(labels != k) for k in range(c)]
    target = int(round(n * spec.mean_degree / 2))
    h = spec.target_homophily
    intra_cap = sum(m.size * (m.size - 1) // 2 for m in members)
    inter_cap = n * (n - 1) // 2 - intra_cap
    if round(target * h) > intra_cap or round(target * (1 - h)) > inter_cap:
        raise ValueError("requested degree and homophily exceed the available node pairs")

    n_intra = int(round(target * h))
    want = {True: n_intra, False: target - n_intra}
    edges: set[tuple[int, int]] = set()
    for intra in (True, False):
        got, tries = 0, 0
        while got < want[intra]:
            tries += 1
            if tries > 10_000:
                raise RuntimeError("edge sampling failed to converge")
            u = rng.integers(n, size=want[intra] - got + 16)
            for a in u:
                pool = members[labels[a]] if intra else others[labels[a]]
                b = pool[rng.integers(pool.size)]
                if a == b:
                    continue
                e = (min(a, b), max(a, b))
                if e not in edges:
                    edges.add(e)
                    got += 1
                    if got == want[intra]:
                        break
    edge_arr = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    means = rng.standard_normal((c, spec.feature_dim))
    x = spec.class_signal * means[labels] + rng.standard_normal((n, spec.feature_dim))
    g = build_graph(edge_arr, n, x, labels, name=f"synthetic-h{h:g}")
    return g.with_masks(*generate_splits(g, proportions, spec.seed).as_tuple())


# -- one-time conversion from binary distributions ---------------------------

def _load_pickle(path: Path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert_planetoid(raw_dir, name: str, out_dir) -> Path:
    """Write ``<name>.content`` / ``<name>.cites`` from Planetoid ``ind.<name>.*`` pickles.

    Follows the usual reconstruction: test rows are reordered by
    ``test.index``, and Citeseer's missing test indices become all-zero
    feature rows labelled with class 0. Run once; afterwards only the text
    files are needed.
    """
    import scipy.sparse as sp

    raw, out = Path(raw_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    obj = {k: _load_pickle(raw / f"ind.{name}.{k}") for k in ("x", "y", "tx", "ty", "allx", "ally", "graph")}
    test_idx = [int(t) for t in (raw / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_idx)
    tx, ty = obj["tx"], np.asarray(obj["ty"])
    if name == "citeseer":
        full = np.arange(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((full.size, tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        ty_ext = np.zeros((full.size, ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        tx, ty = tx_ext, ty_ext
    feats = sp.vstack((obj["allx"], tx)).tolil()
    labels = np.vstack((np.asarray(obj["ally"]), ty))
    feats[test_idx, :] = feats[test_sorted, :]
    labels[test_idx, :] = labels[test_sorted, :]
    dense = np.asarray(feats.todense())
    y = labels.argmax(axis=1)
    with open(out / f"{name}.content", "w") as fh:
        for i, (row, lab) in enumerate(zip(dense, y)):
            fh.write(f"{i} " + " ".join(repr(float(v)) if v % 1 else str(int(v)) for v in row)
                     + f" {int(lab)}\n")
    n = dense.shape[0]
    with open(out / f"{name}.cites", "w") as fh:
        for src in sorted(obj["graph"]):
            for dst in obj["graph"][src]:
                if src < n and dst < n:
                    fh.write(f"{src} {dst}\n")
    return out


def convert_npz_splits(npz_path, out_path) -> Path:
    """Turn an ``.npz`` split with ``train_mask``/``val_mask``/``test_mask`` into text."""
    data = np.load(npz_path)
    splits = Splits(*(np.asarray(data[k], dtype=bool) for k in ("train_mask", "val_mask", "test_mask")))
    write_split_file(out_path, splits)
    return Path(out_path)
