"""Command-line entry points: ``train``, ``benchmark`` and ``verify``.

Any flag can also come from a ``--config`` file of ``key = value`` lines
(``#`` starts a comment, keys are flag names without the leading dashes,
boolean flags take true/false). Flags given on the command line win.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .control import TEControlConfig
from .datasets import ALIASES, KNOWN_DATASETS, DatasetSpec, canonical_name, load_dataset, load_splits
from .graph import LabelSource
from .model import ModelConfig
from .training import TrainConfig, benchmark, train, write_result

DEFAULT_DATA_DIR = os.environ.get("TEGGCN_DATA", "data")

_BOOL_FLAGS = {"no-te"}


def read_config_file(path) -> list[str]:
    """Turn a flat ``key = value`` file into an argv fragment."""
    argv = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key in _BOOL_FLAGS:
            if value.lower() in ("1", "true", "yes"):
                argv.append(f"--{key}")
            elif value.lower() not in ("0", "false", "no"):
                raise ValueError(f"{path}:{lineno}: {key} takes true/false, got {value!r}")
        else:
            argv += [f"--{key}", value]
    return argv


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value file; command-line flags override it")
    p.add_argument("--data-dir", default=DEFAULT_DATA_DIR)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-te", action="store_true", help="train the plain GGCN baseline")
    p.add_argument("--te-period", type=int, default=10)
    p.add_argument("--te-het-frac", type=float, default=0.05)
    p.add_argument("--te-deg-frac", type=float, default=0.10)
    p.add_argument("--max-neighbors", type=int, default=256)
    p.add_argument("--label-source", choices=[s.value for s in LabelSource],
                   default=LabelSource.TRAIN_PLUS_PREDICTIONS.value)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--patience", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--precision", choices=["f32", "f64"], default="f32")
    p.add_argument("--select-by", choices=["val_loss", "val_acc"], default="val_loss")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="teggcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model on one split")
    _add_common(t)
    t.add_argument("--dataset", required=True)
    t.add_argument("--split", type=int, default=0)
    t.add_argument("--out", required=True, help="result file (.json or .csv)")
    t.add_argument("--te-log", help="append per-epoch TE records (JSON lines) here")
    t.add_argument("--checkpoint", help="save the selected-epoch parameters to this .npz")

    b = sub.add_parser("benchmark", help="repeat training over splits, with and without TE")
    _add_common(b)
    b.add_argument("--datasets", required=True, help="comma-separated dataset names")
    b.add_argument("--runs", type=int, default=10)
    b.add_argument("--out", required=True, help="per-run CSV")
    b.add_argument("--markdown", help="summary table as markdown")

    v = sub.add_parser("verify", help="gradient and estimator self-checks")
    v.add_argument("--seeds", type=int, default=20)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    ns = parser.parse_args(argv)
    if getattr(ns, "config", None):
        # file flags first so that the command line overrides them
        ns = parser.parse_args([argv[0]] + read_config_file(ns.config) + argv[1:])
    return ns


def config_from_args(ns: argparse.Namespace) -> TrainConfig:
    model = ModelConfig(num_layers=ns.layers, hidden_dim=ns.hidden, dropout_rate=ns.dropout)
    te = TEControlConfig(enabled=not ns.no_te, het_fraction=ns.te_het_frac,
                         degree_fraction=ns.te_deg_frac, period_epochs=ns.te_period,
                         label_source=LabelSource(ns.label_source), max_neighbors=ns.max_neighbors)
    return TrainConfig(epochs=ns.epochs, learning_rate=ns.lr, weight_decay=ns.weight_decay,
                       patience=min(ns.patience, ns.epochs), seed=ns.seed, model=model, te=te,
                       precision=ns.precision, select_by=ns.select_by)


def _cmd_train(ns) -> int:
    cfg = config_from_args(ns)
    g = load_dataset(ns.data_dir, ns.dataset)
    splits = load_splits(ns.data_dir, canonical_name(ns.dataset), ns.split, g, seed=ns.seed)
    g = g.with_masks(*splits.as_tuple())
    result = train(g, cfg, te_log=ns.te_log, split_index=ns.split, split_source=splits.source,
                   checkpoint=ns.checkpoint)
    write_result(result, ns.out)
    print(f"{result.dataset} split {result.split_index}: test_acc={result.test_accuracy:.4f} "
          f"best_epoch={result.best_val_epoch} total={result.total_wall_time:.1f}s "
          f"te={result.te_wall_time:.1f}s te_calls={result.te_invocation_count}")
    return 0


def _cmd_benchmark(ns) -> int:
    cfg = config_from_args(ns)
    names = [s.strip() for s in ns.datasets.split(",") if s.strip()]
    unknown = [n for n in names if ALIASES.get(n.lower(), n.lower()) not in KNOWN_DATASETS]
    if unknown:
        print(f"unknown dataset(s): {', '.join(unknown)}", file=sys.stderr)
        return 2
    specs = [DatasetSpec(canonical_name(n), ns.data_dir) for n in names]
    variants = (False,) if ns.no_te else (False, True)
    table = benchmark(specs, cfg, runs=ns.runs, variants=variants)
    table.write_csv(ns.out)
    md = table.markdown()
    if ns.markdown:
        Path(ns.markdown).write_text(md)
    print(md, end="")
    return 0 if table.rows else 1


def _cmd_verify(ns) -> int:
    from .verify import run_all

    checks = run_all(range(ns.seeds))
    for c in checks:
        print(c.line())
    return 0 if all(c.passed for c in checks) else 1


def main(argv=None) -> int:
    ns = parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = {"train": _cmd_train, "benchmark": _cmd_benchmark, "verify": _cmd_verify}[ns.command]
    try:
        return cmd(ns)
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
