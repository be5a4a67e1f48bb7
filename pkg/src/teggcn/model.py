"""GGCN node classifier.

Layer update, with ``Hh = H W + b``::

    H' = elu( alpha * ( b0 * Hh + b1 * (S_pos . A) Hh + b2 * (S_neg . A) Hh ) )

``S`` is the cosine similarity of ``Hh`` rows on graph edges (zero on the
diagonal and on non-edges), ``A`` the symmetrically normalized adjacency,
``(b0, b1, b2) = softmax(beta_raw)`` and ``alpha_i = softplus(a * r_i + c)``
with ``r_i`` the node's relative degree.

Signs are only ever needed on edges, so the default path keeps them as an
edge list; :func:`sign_matrices` and the ``signs=`` argument of
:func:`ggcn_layer` give the dense N x N formulation for small graphs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .graph import Graph, normalize_adjacency, relative_degrees

CHECKPOINT_VERSION = 1
SOFTPLUS_INV_ONE = float(np.log(np.expm1(1.0)))


@dataclass
class ModelConfig:
    num_layers: int = 2
    hidden_dim: int = 64
    dropout_rate: float = 0.5
    degree_scaling: bool = True
    num_classes: int = 2
    output_head: bool = True

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


@dataclass
class GraphContext:
    """Per-graph constants consumed by the forward pass."""

    num_nodes: int
    features: Tensor
    src: np.ndarray
    dst: np.ndarray
    indptr: np.ndarray
    edge_norm: np.ndarray
    rel_degrees: np.ndarray
    graph: Graph = field(repr=False)
    _dense_norm: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dense_norm(self) -> np.ndarray:
        if self._dense_norm is None:
            self._dense_norm = normalize_adjacency(self.graph).dense().astype(self.features.dtype)
        return self._dense_norm


def prepare(g: Graph, dtype=np.float64) -> GraphContext:
    norm = normalize_adjacency(g)
    return GraphContext(g.num_nodes, Tensor(g.features.astype(dtype)), g.src, g.dst, g.indptr,
                        norm.edge_values.astype(dtype), relative_degrees(g).astype(dtype)[:, None],
                        g)


@dataclass
class LayerParams:
    weight: Parameter
    bias: Parameter
    beta_raw: Parameter
    degree_coef: Parameter

    def parameters(self):
        return [self.weight, self.bias, self.beta_raw, self.degree_coef]

    def betas(self) -> np.ndarray:
        b = self.beta_raw.data - self.beta_raw.data.max()
        return np.exp(b) / np.exp(b).sum()


@dataclass
class LayerState:
    hidden: Tensor
    transformed: Tensor
    sign: Optional[Tensor]
    alpha: Optional[Tensor]
    edges: tuple = ()

    def sign_dense(self) -> np.ndarray:
        """``S`` as an N x N array (edge-list path only)."""
        src, dst, n = self.edges
        out = np.zeros((n, n), dtype=self.sign.dtype)
        out[src, dst] = self.sign.data
        return out


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_layer(rng, fan_in: int, fan_out: int, name: str, dtype=np.float64) -> LayerParams:
    return LayerParams(
        Parameter(_uniform(rng, fan_in, (fan_in, fan_out), dtype), f"{name}.weight"),
        Parameter(_uniform(rng, fan_in, (fan_out,), dtype), f"{name}.bias", decay=False),
        Parameter(np.zeros(3, dtype), f"{name}.beta_raw", decay=False),
        Parameter(np.array([0.0, SOFTPLUS_INV_ONE], dtype), f"{name}.degree_coef", decay=False),
    )


def sign_matrices(features, adjacency_mask):
    """Dense positive and negative parts of the edge cosine-sign matrix."""
    f = ad.as_tensor(features)
    mask = np.array(adjacency_mask, dtype=f.dtype, copy=True)
    np.fill_diagonal(mask, 0.0)
    s = ad.mul(ad.cosine_rows(f, f), mask)
    return ad.positive_part(s), ad.negative_part(s)


def edge_signs(transformed: Tensor, src: np.ndarray, dst: np.ndarray) -> Tensor:
    """Cosine similarity of ``transformed`` rows along each directed edge."""
    return ad.cosine_paired(ad.gather_rows(transformed, src), ad.gather_rows(transformed, dst))


def degree_scaling(rel_degrees, coef) -> Tensor:
    """``softplus(a * r + c)`` per node, as an (N, 1) column."""
    coef = ad.as_tensor(coef)
    r = ad.as_tensor(np.asarray(rel_degrees).reshape(-1, 1))
    return ad.softplus(ad.add(ad.mul(r, coef[0]), coef[1]))


def ggcn_layer(h, params: LayerParams, ctx: GraphContext, training: bool = False,
               rng: Optional[np.random.Generator] = None, dropout_rate: float = 0.0,
               degree_scale: bool = True, signs=None):
    """One signed-attention convolution. Returns ``(H_next, LayerState)``.

    ``signs`` may supply dense ``(S_pos, S_neg)`` to replace the cosine signs.
    """
    h = ad.as_tensor(h)
    if h.shape[1] != params.weight.shape[0]:
        raise ad.ShapeError("ggcn_layer", h.shape, params.weight.shape)
    h = ad.dropout(h, dropout_rate, training, rng)
    hh = ad.add(ad.matmul(h, params.weight), params.bias)
    beta = ad.row_softmax(params.beta_raw)
    sign = None
    if signs is None:
        sign = edge_signs(hh, ctx.src, ctx.dst)
        w = ad.mul(sign, ctx.edge_norm)
        pos = ad.spmm(ad.positive_part(w), ctx.src, ctx.dst, hh, ctx.num_nodes, ctx.indptr)
        neg = ad.spmm(ad.negative_part(w), ctx.src, ctx.dst, hh, ctx.num_nodes, ctx.indptr)
    else:
        s_pos, s_neg = (ad.as_tensor(s) for s in signs)
        pos = ad.matmul(ad.mul(s_pos, ctx.dense_norm), hh)
        neg = ad.matmul(ad.mul(s_neg, ctx.dense_norm), hh)
    mixed = ad.add(ad.add(ad.mul(hh, beta[0]), ad.mul(pos, beta[1])), ad.mul(neg, beta[2]))
    alpha = None
    if degree_scale:
        alpha = degree_scaling(ctx.rel_degrees, params.degree_coef)
        mixed = ad.mul(alpha, mixed)
    out = ad.elu(mixed)
    return out, LayerState(out, hh, sign, alpha, (ctx.src, ctx.dst, ctx.num_nodes))


class GGCN:
    """Input projection, stacked GGCN layers and a linear classification head.

    With ``output_head=False`` the last GGCN layer emits the class scores
    directly.
    """

    def __init__(self, num_features: int, config: ModelConfig, seed: int = 0,
                 dtype=np.float64):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        hid, c = config.hidden_dim, config.num_classes
        self.input_weight = Parameter(_uniform(rng, num_features, (num_features, hid), dtype),
                                      "input.weight")
        self.input_bias = Parameter(_uniform(rng, num_features, (hid,), dtype), "input.bias",
                                    decay=False)
        self.layers = []
        for i in range(config.num_layers):
            last = i == config.num_layers - 1
            out = c if last and not config.output_head else hid
            self.layers.append(init_layer(rng, hid, out, f"layer{i}", dtype))
        self.head_weight = self.head_bias = None
        if config.output_head:
            self.head_weight = Parameter(_uniform(rng, hid, (hid, c), dtype), "head.weight")
            self.head_bias = Parameter(_uniform(rng, hid, (c,), dtype), "head.bias", decay=False)
        self.last_states: list[LayerState] = []

    def parameters(self) -> list[Parameter]:
        ps = [self.input_weight, self.input_bias]
        for layer in self.layers:
            ps.extend(layer.parameters())
        if self.head_weight is not None:
            ps.extend([self.head_weight, self.head_bias])
        return ps

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def forward(self, ctx: GraphContext, training: bool = False,
                rng: Optional[np.random.Generator] = None, correction=None) -> Tensor:
        """Class scores (N, C); softmax is left to the loss or to :func:`predict_proba`.

        ``correction`` (a per-node offset vector or a ``TECorrection``) is
        added to the output of the final convolution as a constant.
        """
        from .control import apply_correction

        cfg = self.config
        h = ad.elu(ad.add(ad.matmul(ctx.features, self.input_weight), self.input_bias))
        self.last_states = []
        for layer in self.layers:
            h, state = ggcn_layer(h, layer, ctx, training, rng, cfg.dropout_rate,
                                  cfg.degree_scaling)
            self.last_states.append(state)
        if correction is not None:
            h = apply_correction(h, correction)
        if self.head_weight is not None:
            h = ad.add(ad.matmul(h, self.head_weight), self.head_bias)
        return h

    __call__ = forward

    def state_dict(self) -> dict:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict):
        for p in self.parameters():
            if state[p.name].shape != p.shape:
                raise ValueError(f"shape mismatch for {p.name}: {state[p.name].shape} vs {p.shape}")
            p.data[...] = state[p.name]


def model_forward(g: Graph, model: GGCN, training: bool = False, rng=None,
                  correction=None) -> Tensor:
    return model.forward(prepare(g, model.dtype), training, rng, correction)


def predict_proba(logits) -> np.ndarray:
    return ad.row_softmax(ad.as_tensor(logits)).data


def save_checkpoint(model: GGCN, path, num_features: Optional[int] = None) -> Path:
    """Store every parameter plus the model config in an ``.npz`` archive.

    Keys are parameter names; ``__meta__`` holds a JSON header with the
    format version, config, dtype and input width.
    """
    meta = dict(version=CHECKPOINT_VERSION, config=asdict(model.config),
                dtype=model.dtype.str, num_features=num_features or model.input_weight.shape[0])
    arrays = model.state_dict()
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> GGCN:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        model = GGCN(meta["num_features"], ModelConfig(**meta["config"]), dtype=np.dtype(meta["dtype"]))
        model.load_state_dict({k: data[k] for k in data.files if k != "__meta__"})
    return model
