# tools/filegen.py
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Tuple

import pandas as pd

TRACE_COLUMNS = ["epoch", "mean_total_loss", "mean_label_loss", "mean_metric_loss",
                 "test_map_av", "test_map_va"]
SWEEP_COLUMNS = ["strategy", "k", "map_av", "map_va", "map_avg"]
GRAPH_COLUMNS = ["p", "q", "edge"]


def _safe_name(name: str, default: str) -> str:
    name = (name or "").strip().replace("\\", "/").split("/")[-1]
    return name if name else default


def _target(name: str, default: str, suffix: str, out_dir: Path) -> Path:
    fname = _safe_name(name, default)
    if not fname.lower().endswith(suffix):
        fname += suffix
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / fname


def make_txt(name: str, content: str, out_dir: Path, suffix: str = ".txt") -> Path:
    out = _target(name, "out" + suffix, suffix, out_dir)
    out.write_text(content or "", encoding="utf-8")
    return out


def make_csv(name: str, frame: pd.DataFrame, out_dir: Path) -> Path:
    out = _target(name, "out.csv", ".csv", out_dir)
    frame.to_csv(out, index=False, lineterminator="\n")
    return out


def trace_csv(rows: Sequence[Mapping], out_dir: Path, name: str = "trace.csv") -> Path:
    frame = pd.DataFrame(list(rows), columns=TRACE_COLUMNS)
    frame["epoch"] = frame["epoch"].astype(int)
    return make_csv(name, frame, out_dir)


def sweep_csv(rows: Sequence[Mapping], out_dir: Path, name: str = "sweep_k.csv") -> Path:
    frame = pd.DataFrame(list(rows), columns=SWEEP_COLUMNS)
    return make_csv(name, frame, out_dir)


def graph_csv(edges: Iterable[Tuple[int, int]], out_dir: Path, name: str = "graph.csv") -> Path:
    frame = pd.DataFrame([(p, q, 1) for p, q in edges], columns=GRAPH_COLUMNS)
    return make_csv(name, frame, out_dir)
