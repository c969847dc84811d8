# data/fileformats.py
"""
On-disk formats for features and labels.

AVF (features, little-endian):  b"AVF1" | u32 n | u32 dim | u8 dtype (0=f32, 1=f64) | n*dim values
AVL (labels, little-endian):    b"AVL1" | u32 n | u32 c   | n*c bytes in {0, 1}
CSV fallback: one sample per line, comma-separated, no header.

A dataset directory holds audio.avf, visual.avf, labels.avl and split.csv.
"""

import logging
import struct
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from .dataset import Dataset
from .errors import LoadError

log = logging.getLogger(__name__)

AVF_MAGIC = b"AVF1"
AVL_MAGIC = b"AVL1"
_AVF_HEADER = struct.Struct("<4sIIB")
_AVL_HEADER = struct.Struct("<4sII")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

PathLike = Union[str, Path]


def _first_bad_row(values: np.ndarray) -> Optional[int]:
    bad = np.flatnonzero(~np.isfinite(values).all(axis=1))
    return int(bad[0]) if bad.size else None


def _read_csv(path: Path) -> np.ndarray:
    try:
        frame = pd.read_csv(path, header=None, dtype=np.float64, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        return np.zeros((0, 0))
    except ValueError as e:
        raise LoadError(f"{path}: not a numeric CSV ({e})") from e
    return frame.to_numpy(dtype=np.float64)


def write_avf(path: PathLike, values, dtype: str = "float32") -> Path:
    path = Path(path)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"write_avf needs a matrix, got shape {arr.shape}")
    code = {"float32": 0, "float64": 1}[dtype]
    n, dim = arr.shape
    with path.open("wb") as fh:
        fh.write(_AVF_HEADER.pack(AVF_MAGIC, n, dim, code))
        fh.write(arr.astype(_DTYPES[code]).tobytes(order="C"))
    return path


def load_features(path: PathLike, expected_dim: Optional[int] = None) -> np.ndarray:
    """Read an AVF or CSV feature file into an (n, dim) float64 matrix."""
    path = Path(path)
    if not path.exists():
        raise LoadError(f"{path}: no such file")
    raw = path.read_bytes()
    if raw[:3] == b"AVF":
        values = _parse_avf(path, raw)
    else:
        values = _read_csv(path)
    if expected_dim is not None and values.shape[0] and values.shape[1] != expected_dim:
        raise LoadError(f"{path}: dimension mismatch, file has {values.shape[1]}, expected {expected_dim}")
    row = _first_bad_row(values) if values.size else None
    if row is not None:
        raise LoadError(f"{path}: non-finite value in row {row}")
    log.debug("loaded %s features from %s", values.shape, path)
    return values


def _parse_avf(path: Path, raw: bytes) -> np.ndarray:
    if len(raw) < _AVF_HEADER.size:
        raise LoadError(f"{path}: truncated AVF header")
    magic, n, dim, code = _AVF_HEADER.unpack_from(raw)
    if magic != AVF_MAGIC:
        raise LoadError(f"{path}: bad magic/version {magic!r}, expected {AVF_MAGIC!r}")
    if code not in _DTYPES:
        raise LoadError(f"{path}: unknown dtype code {code}")
    dt = _DTYPES[code]
    body = raw[_AVF_HEADER.size:]
    need = n * dim * dt.itemsize
    if len(body) != need:
        row = len(body) // max(dim * dt.itemsize, 1)
        raise LoadError(f"{path}: payload has {len(body)} bytes, header needs {need} (short at row {row})")
    return np.frombuffer(body, dtype=dt).astype(np.float64).reshape(n, dim)


def write_avl(path: PathLike, labels) -> Path:
    path = Path(path)
    arr = np.asarray(labels, dtype=np.uint8)
    n, c = arr.shape
    with path.open("wb") as fh:
        fh.write(_AVL_HEADER.pack(AVL_MAGIC, n, c))
        fh.write(arr.tobytes(order="C"))
    return path


def load_labels(path: PathLike, expected_c: Optional[int] = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"{path}: no such file")
    raw = path.read_bytes()
    if raw[:3] == b"AVL":
        if len(raw) < _AVL_HEADER.size:
            raise LoadError(f"{path}: truncated AVL header")
        magic, n, c = _AVL_HEADER.unpack_from(raw)
        if magic != AVL_MAGIC:
            raise LoadError(f"{path}: bad magic/version {magic!r}, expected {AVL_MAGIC!r}")
        body = raw[_AVL_HEADER.size:]
        if len(body) != n * c:
            raise LoadError(f"{path}: payload has {len(body)} bytes, header needs {n * c}")
        labels = np.frombuffer(body, dtype=np.uint8).reshape(n, c).copy()
    else:
        labels = _read_csv(path)
        if labels.size and not np.isin(labels, (0.0, 1.0)).all():
            bad = int(np.flatnonzero(~np.isin(labels, (0.0, 1.0)).all(axis=1))[0])
            raise LoadError(f"{path}: label row {bad} has entries outside {{0, 1}}")
        labels = labels.astype(np.uint8)
    if labels.size and labels.max() > 1:
        bad = int(np.flatnonzero(labels.max(axis=1) > 1)[0])
        raise LoadError(f"{path}: label row {bad} has entries outside {{0, 1}}")
    if expected_c is not None and labels.shape[0] and labels.shape[1] != expected_c:
        raise LoadError(f"{path}: category count mismatch, file has {labels.shape[1]}, expected {expected_c}")
    empty = np.flatnonzero(labels.sum(axis=1) == 0) if labels.size else np.array([])
    if empty.size:
        raise LoadError(f"{path}: label row {int(empty[0])} has no category set")
    return labels


# ---------- dataset directories ----------
AUDIO_FILE = "audio.avf"
VISUAL_FILE = "visual.avf"
LABELS_FILE = "labels.avl"
SPLIT_FILE = "split.csv"


def save_dataset(directory: PathLike, dataset: Dataset, train_idx, test_idx,
                 dtype: str = "float32") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_avf(directory / AUDIO_FILE, dataset.audio, dtype)
    write_avf(directory / VISUAL_FILE, dataset.visual, dtype)
    write_avl(directory / LABELS_FILE, dataset.labels)
    split = pd.DataFrame({
        "index": np.concatenate([np.asarray(train_idx), np.asarray(test_idx)]).astype(int),
        "split": ["train"] * len(train_idx) + ["test"] * len(test_idx),
    }).sort_values("index")
    split.to_csv(directory / SPLIT_FILE, index=False)
    log.info("wrote dataset (%d pairs, c=%d) to %s", len(dataset), dataset.categories, directory)
    return directory


def load_dataset(directory: PathLike, audio_dim: Optional[int] = None,
                 visual_dim: Optional[int] = None) -> Tuple[Dataset, Dataset]:
    """Load a dataset directory and return its (train, test) splits."""
    directory = Path(directory)
    if not directory.is_dir():
        raise LoadError(f"{directory}: not a dataset directory")
    audio = load_features(directory / AUDIO_FILE, audio_dim)
    visual = load_features(directory / VISUAL_FILE, visual_dim)
    labels = load_labels(directory / LABELS_FILE)
    if not (audio.shape[0] == visual.shape[0] == labels.shape[0]):
        raise LoadError(f"{directory}: row counts differ "
                        f"(audio {audio.shape[0]}, visual {visual.shape[0]}, labels {labels.shape[0]})")
    full = Dataset(audio, visual, labels, provenance=str(directory))

    split_path = directory / SPLIT_FILE
    if not split_path.exists():
        raise LoadError(f"{split_path}: no such file")
    split = pd.read_csv(split_path)
    if set(split.columns) != {"index", "split"}:
        raise LoadError(f"{split_path}: expected columns index,split, got {list(split.columns)}")
    unknown = split.loc[~split["split"].isin(["train", "test"])]
    if len(unknown):
        raise LoadError(f"{split_path}: row {int(unknown.index[0])} has unknown split {unknown['split'].iloc[0]!r}")
    idx = split["index"].to_numpy()
    if idx.size and (idx.min() < 0 or idx.max() >= len(full)):
        raise LoadError(f"{split_path}: index out of range for {len(full)} pairs")
    train = np.sort(split.loc[split["split"] == "train", "index"].to_numpy())
    test = np.sort(split.loc[split["split"] == "test", "index"].to_numpy())
    return full.subset(train, "train"), full.subset(test, "test")
