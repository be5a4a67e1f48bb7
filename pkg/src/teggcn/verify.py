"""Self-checks: analytic gradients against finite differences and the TE
estimators against closed-form values."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .control import TEControlConfig, TEController
from .datasets import SynthSpec, generate_synthetic
from .graph import LabelSource
from .model import GGCN, ModelConfig, prepare
from .te import SeriesPair, TEConfig, te_ksg, te_plugin


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    bound: float
    seconds: float

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: {self.value:.3g} (bound {self.bound:g}, {self.seconds:.1f}s)"


def gradient_fixture(seed: int, num_nodes: int = 16, feature_dim: int = 8, hidden: int = 4):
    """Small random graph, a 2-layer f64 model and the loss closure over it.

    The closure runs the training-mode forward (dropout with a fixed mask)
    with the TE correction of the fixture applied.
    """
    g = generate_synthetic(SynthSpec(num_nodes=num_nodes, num_classes=2, mean_degree=3.0,
                                     target_homophily=0.3, feature_dim=feature_dim, seed=seed))
    cfg = ModelConfig(num_layers=2, hidden_dim=hidden, dropout_rate=0.2, num_classes=2)
    model = GGCN(g.num_features, cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.data[...] = p.data + 0.1 * rng.standard_normal(p.shape)
    ctrl = TEController(g, TEControlConfig(label_source=LabelSource.FULL_LABELS,
                                           het_fraction=0.5, degree_fraction=0.5), seed)
    corr = ctrl.update(0)
    ctx = prepare(g, np.float64)

    def loss_fn(params):
        out = model(ctx, True, np.random.default_rng(seed + 1), corr)
        return ad.cross_entropy_masked(out, g.labels, g.train_mask)

    return model, loss_fn


def gradient_check(seeds=range(20), tol: float = 1e-4) -> Check:
    t0 = time.perf_counter()
    worst = 0.0
    for s in seeds:
        model, f = gradient_fixture(s)
        worst = max(worst, ad.finite_diff_check(f, model.parameters()))
    return Check("gradient check, 2-layer forward with correction", worst < tol, worst, tol,
                 time.perf_counter() - t0)


def binary_chain(n: int, seed: int = 0) -> SeriesPair:
    """``y`` i.i.d. fair bits, ``x[t+1] = y[t]``; TE(y -> x) = ln 2."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n).astype(float)
    x = np.empty(n)
    x[0] = rng.integers(0, 2)
    x[1:] = y[:-1]
    return SeriesPair(x=x, y=y)


def gaussian_coupling(n: int, rho: float = 0.5, seed: int = 0) -> SeriesPair:
    """``x[t+1] = rho * y[t] + sqrt(1 - rho^2) * e[t]`` with white ``y`` and ``e``.

    TE(y -> x) = -ln(1 - rho^2) / 2.
    """
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = rng.standard_normal()
    x[1:] = rho * y[:-1] + math.sqrt(1 - rho * rho) * rng.standard_normal(n - 1)
    return SeriesPair(x=x, y=y)


def estimator_checks() -> list[Check]:
    out = []
    cfg = TEConfig()
    t0 = time.perf_counter()
    pair = binary_chain(10000)
    plug = te_plugin(pair, cfg)
    out.append(Check("plug-in TE on binary chain vs ln 2", abs(plug - math.log(2)) <= 0.02,
                     abs(plug - math.log(2)), 0.02, time.perf_counter() - t0))
    t0 = time.perf_counter()
    ksg = te_ksg(pair, cfg)
    out.append(Check("KSG vs plug-in on binary chain", abs(ksg - plug) <= 0.1, abs(ksg - plug), 0.1,
                     time.perf_counter() - t0))
    t0 = time.perf_counter()
    vals = []
    for s in range(10):
        rng = np.random.default_rng(100 + s)
        vals.append(te_ksg(SeriesPair(rng.standard_normal(2000), rng.standard_normal(2000)), cfg, s))
    m = abs(float(np.mean(vals)))
    out.append(Check("KSG on independent Gaussians, |mean|", m < 0.05, m, 0.05, time.perf_counter() - t0))
    t0 = time.perf_counter()
    rho = 0.5
    exact = -0.5 * math.log(1 - rho * rho)
    err = abs(te_ksg(gaussian_coupling(5000, rho), cfg) - exact)
    out.append(Check("KSG on Gaussian linear coupling vs analytic", err <= 0.1, err, 0.1,
                     time.perf_counter() - t0))
    return out


def run_all(seeds=range(20)) -> list[Check]:
    return [gradient_check(seeds)] + estimator_checks()
