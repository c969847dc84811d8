# apps/cli/main.py
"""
AVForge command line.

    python -m apps.cli.main synth   --out data/syn3 --classes 3 --per-class 50 --seed 1
    python -m apps.cli.main train   --data data/syn3 --run baseline --epochs 50
    python -m apps.cli.main eval    --data data/syn3 --checkpoint out/baseline/checkpoint.aadm
    python -m apps.cli.main sweep-k --data data/syn3 --run sweep --k-max 7

Exit codes: 0 success, 1 runtime abort, 2 usage or configuration error.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from data import (GenerationError, LoadError, load_dataset, save_dataset, split_indices,
                  synth_generate)
from engine import NumericError
from runners.checkpoint import CheckpointError
from runners.trainer import (TrainingAborted, evaluate_model, load_checkpoint, model_for, sweep_k,
                             train)
from tools.filegen import make_csv, make_txt, sweep_csv
from tools.metrics import EvaluationError, report_frame
from .config import (CONFIG_ECHO, ConfigError, RunConfig, echo_config, read_config_file,
                     resolve_run_config)

# ---- load .env ----
BASE = Path(__file__).resolve().parents[2]
load_dotenv(dotenv_path=BASE / ".env")

log = logging.getLogger("avforge")

EXIT_OK, EXIT_ABORT, EXIT_USAGE = 0, 1, 2
REPORT_FILE = "report.csv"
SWEEP_FILE = "sweep_k.csv"


def _setup_logging():
    level = os.getenv("AVFORGE_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


# ---------- argument parsing ----------
def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--data", dest="data_dir", help="dataset directory")
    p.add_argument("--out", dest="out_dir", help="output root (default $AVFORGE_OUT_DIR or ./out)")
    p.add_argument("--run", dest="run_name", help="run directory name under --out")
    p.add_argument("--seed", type=int)


def _training(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--k", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--loss", help="triplet, triplet_dagger, hard_triplet, contrastive, n_pair, angular, hinge, dsl")
    p.add_argument("--margin", type=float)
    p.add_argument("--contrastive-margin", dest="contrastive_margin", type=float)
    p.add_argument("--scope", help="all_terms or anchor_only")
    p.add_argument("--aa-mode", dest="aa_mode", help="joint or literal")
    p.add_argument("--no-aa", dest="use_aa", action="store_const", const=False)
    p.add_argument("--contrastive-printed", dest="contrastive_printed", action="store_const", const=True)
    p.add_argument("--angular-degrees", dest="angular_degrees", type=float)
    p.add_argument("--dsl-temperature", dest="dsl_temperature", type=float)
    p.add_argument("--graph-scope", dest="graph_scope", help="per_batch or per_epoch_full")
    p.add_argument("--cross-modal-neighbors", dest="cross_modal_neighbors", action="store_const", const=True)
    p.add_argument("--per-modality-attention", dest="per_modality_attention", action="store_const", const=True)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--eval-with-proxies", dest="eval_with_proxies", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avforge", description="Anchor-aware audio-visual metric learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    _common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--audio-dim", dest="audio_dim", type=int)
    p.add_argument("--visual-dim", dest="visual_dim", type=int)
    p.add_argument("--separation", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--dtype", choices=["float32", "float64"])

    p = sub.add_parser("train", help="train both branches and the attention block")
    _common(p)
    _training(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--dump-graph", dest="dump_graph", action="store_const", const=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _common(p)
    _training(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("sweep-k", help="MAP for k = 1..k_max under each triplet strategy")
    _common(p)
    _training(p)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--parallel-runs", dest="parallel_runs", type=int)
    return parser


def _resolve(args: argparse.Namespace, fallback_config: Optional[Path] = None) -> RunConfig:
    skip = {"command", "config"}
    overrides = {k: v for k, v in vars(args).items() if k not in skip and v is not None}
    source = args.config or (fallback_config if fallback_config and fallback_config.is_file() else None)
    file_values = read_config_file(source) if source else {}
    if source and not args.config:
        log.info("using %s for the model configuration", source)
    return resolve_run_config(file_values, overrides)


def _require_data(cfg: RunConfig) -> Path:
    if not cfg.data_dir:
        raise ConfigError("a dataset directory is required (--data or data_dir)")
    return Path(cfg.data_dir)


# ---------- commands ----------
def cmd_synth(cfg: RunConfig) -> int:
    s = cfg.synth
    out = Path(cfg.data_dir or cfg.out_dir)
    ds = synth_generate(s.classes, s.per_class, s.audio_dim, s.visual_dim, s.separation, s.noise, s.seed)
    train_idx, test_idx = split_indices(ds.labels, s.train_fraction, s.seed)
    save_dataset(out, ds, train_idx, test_idx, s.dtype)
    make_txt(CONFIG_ECHO, echo_config(cfg, ["run", "synth"]), out, suffix=".env")
    print(f"wrote {len(ds)} pairs ({len(train_idx)} train / {len(test_idx)} test) to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    train_set, test_set = load_dataset(_require_data(cfg))
    run_dir = cfg.run_dir
    make_txt(CONFIG_ECHO, echo_config(cfg, ["run", "train"]), run_dir, suffix=".env")
    result = train(train_set, test_set if len(test_set) else None, cfg.train, run_dir=run_dir,
                   resume=Path(cfg.resume) if cfg.resume else None)
    if len(test_set):
        res = evaluate_model(result.model, test_set, cfg.train)
        make_csv(REPORT_FILE, report_frame(res), run_dir)
        print(_summary(*res.summary()))
    print(f"run written to {run_dir}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    ckpt = Path(cfg.checkpoint)
    if not ckpt.is_file():
        raise CheckpointError(f"{ckpt}: no such checkpoint")
    train_set, test_set = load_dataset(_require_data(cfg))
    model = model_for(train_set if len(train_set) else test_set, cfg.train)
    load_checkpoint(ckpt, model)
    res = evaluate_model(model, test_set, cfg.train)
    make_csv(REPORT_FILE, report_frame(res), ckpt.parent)
    print(_summary(*res.summary()))
    return EXIT_OK


def cmd_sweep_k(cfg: RunConfig) -> int:
    train_set, test_set = load_dataset(_require_data(cfg))
    run_dir = cfg.run_dir
    make_txt(CONFIG_ECHO, echo_config(cfg, ["run", "train"]), run_dir, suffix=".env")
    rows = sweep_k(train_set, test_set, cfg.train, range(1, cfg.k_max + 1),
                   parallel_runs=cfg.parallel_runs)
    path = sweep_csv(rows, run_dir, SWEEP_FILE)
    print(f"{len(rows)} sweep rows written to {path}")
    return EXIT_OK


def _summary(av: float, va: float, avg: float) -> str:
    return f"{'A->V':>6} {'V->A':>6} {'Avg':>6}\n{av:6.3f} {va:6.3f} {avg:6.3f}"


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "sweep-k": cmd_sweep_k}


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        fallback = Path(args.checkpoint).parent / CONFIG_ECHO if args.command == "eval" else None
        cfg = _resolve(args, fallback)
        return COMMANDS[args.command](cfg)
    except ValidationError as e:
        keys = sorted({".".join(str(p) for p in err["loc"]) for err in e.errors()})
        print(f"error: invalid configuration for {', '.join(keys)}\n{e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, NumericError, EvaluationError) as e:
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, LoadError, CheckpointError, GenerationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
