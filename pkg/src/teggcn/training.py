"""Training loop, evaluation and the multi-run benchmark."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .control import TEControlConfig, TEController, should_run
from .datasets import REFERENCE_TABLE, DatasetSpec, load_dataset, load_splits
from .graph import Graph, LabelSource
from .model import GGCN, ModelConfig, prepare, save_checkpoint
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

CSV_COLUMNS = ["dataset", "split", "te_enabled", "test_acc", "best_val_epoch", "te_wall_s",
               "total_wall_s", "te_calls", "seed", "config_hash"]


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    patience: int = 100
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    te: TEControlConfig = field(default_factory=TEControlConfig)
    precision: str = "f32"
    select_by: str = "val_loss"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.patience <= self.epochs:
            raise ValueError("patience must lie in [0, epochs]")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.select_by not in ("val_loss", "val_acc"):
            raise ValueError(f"select_by must be val_loss or val_acc, got {self.select_by!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class RunResult:
    dataset: str
    split_index: int
    seed: int
    te_enabled: bool
    best_val_epoch: int
    test_accuracy: float
    val_accuracy: float
    best_val_loss: float
    te_wall_time: float
    total_wall_time: float
    te_invocation_count: int
    config_fingerprint: str
    epochs_run: int
    optimizer_steps: int
    te_estimator_runs: int = 0
    split_source: str = "file"
    label_source: str = ""
    history: list = field(default_factory=list, repr=False)
    te_records: list = field(default_factory=list, repr=False)

    def csv_row(self) -> dict:
        return dict(dataset=self.dataset, split=self.split_index, te_enabled=int(self.te_enabled),
                    test_acc=f"{self.test_accuracy:.6f}", best_val_epoch=self.best_val_epoch,
                    te_wall_s=f"{self.te_wall_time:.4f}", total_wall_s=f"{self.total_wall_time:.4f}",
                    te_calls=self.te_invocation_count, seed=self.seed,
                    config_hash=self.config_fingerprint)

    def to_json(self) -> dict:
        return asdict(self)


def evaluate(logits, labels, mask) -> float:
    """Share of masked nodes whose arg-max score equals the label (ties -> lowest class)."""
    z = logits.data if isinstance(logits, ad.Tensor) else np.asarray(logits)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("evaluate: empty mask")
    return float(np.mean(np.argmax(z[mask], axis=1) == np.asarray(labels)[mask]))


def _masked_loss(z: np.ndarray, labels, mask) -> float:
    return float(ad.cross_entropy_masked(ad.Tensor(z), labels, mask).data)


def _diagnostics(params) -> str:
    parts = []
    for p in params:
        finite = np.isfinite(p.data).all() and (p.grad is None or np.isfinite(p.grad).all())
        parts.append(f"{p.name}: max|w|={np.nanmax(np.abs(p.data)):.3g} finite={finite}")
    return "; ".join(parts)


def train(g: Graph, cfg: TrainConfig, te_log=None, split_index: int = 0,
          split_source: str = "file", checkpoint=None) -> RunResult:
    """Fit a GGCN (with the TE correction when ``cfg.te.enabled``) on ``g``'s masks.

    Returns metrics at the epoch with the best validation loss (or accuracy,
    per ``cfg.select_by``). Training stops after ``cfg.patience`` epochs
    without improvement. ``checkpoint`` names an ``.npz`` file that receives
    the parameters of the selected epoch.
    """
    t_start = time.perf_counter()
    if not g.train_mask.any() or not g.val_mask.any() or not g.test_mask.any():
        raise ValueError("train, validation and test masks must all be non-empty")
    num_classes = int(g.labels.max()) + 1
    mcfg = replace(cfg.model, num_classes=num_classes)
    init_ss, drop_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    model = GGCN(g.num_features, mcfg, seed=init_ss, dtype=cfg.dtype)
    params = model.parameters()
    ctx = prepare(g, cfg.dtype)
    drop_rng = np.random.default_rng(drop_ss)
    controller = TEController(g, cfg.te, cfg.seed, te_log) if cfg.te.enabled else None
    opt = AdamState(lr=cfg.learning_rate, weight_decay=cfg.weight_decay)

    best_key, best_epoch = np.inf, -1
    best = dict(val_loss=np.inf, val_acc=0.0, test_acc=0.0)
    history = []
    epoch = -1
    for epoch in range(cfg.epochs):
        correction = None
        if controller is not None:
            preds = None
            if should_run(epoch, cfg.te) and cfg.te.label_source is LabelSource.TRAIN_PLUS_PREDICTIONS:
                preds = np.argmax(model(ctx, False, None, controller.current).data, axis=1)
            correction = controller.update(epoch, preds)

        with ad.Tape():
            logits = model(ctx, True, drop_rng, correction)
            loss = ad.cross_entropy_masked(logits, g.labels, g.train_mask)
        train_loss = float(loss.data)
        if not np.isfinite(train_loss):
            raise TrainingDiverged(f"non-finite training loss at epoch {epoch}: {_diagnostics(params)}")
        ad.backward(loss, params)
        adam_step(params, None, opt)

        z = model(ctx, False, None, correction).data
        val_loss = _masked_loss(z, g.labels, g.val_mask)
        val_acc = evaluate(z, g.labels, g.val_mask)
        test_acc = evaluate(z, g.labels, g.test_mask)
        history.append(dict(epoch=epoch, train_loss=train_loss, val_loss=val_loss,
                            val_acc=val_acc, test_acc=test_acc))
        key = val_loss if cfg.select_by == "val_loss" else -val_acc
        if key < best_key:
            best_key, best_epoch = key, epoch
            best = dict(val_loss=val_loss, val_acc=val_acc, test_acc=test_acc)
            if checkpoint is not None:
                best_state = model.state_dict()
        elif epoch - best_epoch >= cfg.patience:
            break

    if checkpoint is not None:
        model.load_state_dict(best_state)
        save_checkpoint(model, checkpoint)
    total = time.perf_counter() - t_start
    return RunResult(
        dataset=g.name, split_index=split_index, seed=cfg.seed, te_enabled=cfg.te.enabled,
        best_val_epoch=best_epoch, test_accuracy=best["test_acc"], val_accuracy=best["val_acc"],
        best_val_loss=best["val_loss"],
        te_wall_time=controller.wall_time if controller else 0.0, total_wall_time=total,
        te_invocation_count=controller.calls if controller else 0,
        config_fingerprint=cfg.fingerprint(), epochs_run=epoch + 1, optimizer_steps=opt.step,
        te_estimator_runs=controller.estimator_runs if controller else 0,
        split_source=split_source, label_source=cfg.te.label_source.value,
        history=history, te_records=controller.records if controller else [])


# -- benchmark -------------------------------------------------------------

@dataclass
class BenchmarkRow:
    dataset: str
    runs: int
    ggcn_mean: float
    ggcn_std: float
    te_mean: float
    te_std: float
    overhead: float


@dataclass
class BenchmarkTable:
    rows: list = field(default_factory=list)
    runs: list = field(default_factory=list)
    skipped: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for r in self.runs:
                w.writerow(r.csv_row())

    def markdown(self) -> str:
        lines = ["| Dataset | GGCN (%) | TE-GGCN (%) | TE time overhead | Published GGCN | Published TE-GGCN |",
                 "|---|---|---|---|---|---|"]
        for r in self.rows:
            ref = REFERENCE_TABLE.get(r.dataset)
            pub_g = f"{ref['ggcn'][0]:.2f} ± {ref['ggcn'][1]:.2f}" if ref else "-"
            pub_t = f"{ref['te'][0]:.2f} ± {ref['te'][1]:.2f}" if ref else "-"
            lines.append(f"| {r.dataset} | {100 * r.ggcn_mean:.2f} ± {100 * r.ggcn_std:.2f} "
                         f"| {100 * r.te_mean:.2f} ± {100 * r.te_std:.2f} | {r.overhead:.2f}x "
                         f"| {pub_g} | {pub_t} |")
        for name, reason in self.skipped.items():
            lines.append(f"| {name} | skipped: {reason} | | | | |")
        return "\n".join(lines) + "\n"


def _mean_std(xs) -> tuple[float, float]:
    xs = np.asarray(xs, dtype=np.float64)
    return float(xs.mean()), float(xs.std(ddof=1)) if xs.size > 1 else 0.0


def summarize(name: str, runs: Sequence[RunResult]) -> BenchmarkRow:
    base = [r for r in runs if not r.te_enabled]
    te = [r for r in runs if r.te_enabled]
    gm, gs = _mean_std([r.test_accuracy for r in base]) if base else (np.nan, np.nan)
    tm, ts = _mean_std([r.test_accuracy for r in te]) if te else (np.nan, np.nan)
    denom = sum(r.total_wall_time for r in base)
    overhead = sum(r.total_wall_time for r in te) / denom if base and te and denom > 0 else np.nan
    return BenchmarkRow(name, max(len(base), len(te)), gm, gs, tm, ts, overhead)


def benchmark(specs: Sequence[DatasetSpec], cfg: TrainConfig, runs: int = 10,
              variants: Sequence[bool] = (False, True), graphs: Optional[dict] = None) -> BenchmarkTable:
    """Run every dataset over ``runs`` splits with and without the TE correction.

    Run ``r`` uses split file ``r`` (or a generated split seeded with
    ``cfg.seed + r``) and training seed ``cfg.seed + r``. ``graphs`` may map
    dataset names to preloaded graphs. Datasets that fail to load are
    recorded in :attr:`BenchmarkTable.skipped`.
    """
    table = BenchmarkTable()
    for spec in specs:
        try:
            g = graphs[spec.name] if graphs and spec.name in graphs else load_dataset(spec.root_dir, spec.name)
        except (OSError, ValueError) as err:
            log.warning("skipping %s: %s", spec.name, err)
            table.skipped[spec.name] = str(err)
            continue
        results = []
        for r in range(runs):
            seed = cfg.seed + r
            splits = load_splits(spec.root_dir, spec.name, r, g, seed=seed)
            gr = g.with_masks(*splits.as_tuple())
            for enabled in variants:
                run_cfg = replace(cfg, seed=seed, te=replace(cfg.te, enabled=enabled))
                res = train(gr, run_cfg, split_index=r, split_source=splits.source)
                log.info("%s split %d te=%s acc=%.4f (%.1fs)", spec.name, r, enabled,
                         res.test_accuracy, res.total_wall_time)
                results.append(res)
        table.runs.extend(results)
        table.rows.append(summarize(spec.name, results))
    return table


def write_result(result: RunResult, path):
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            w.writerow(result.csv_row())
    else:
        path.write_text(json.dumps(result.to_json(), indent=2, default=str))
    return path
