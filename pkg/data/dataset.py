# data/dataset.py
"""
Paired audio-visual samples.

A Dataset stores its pairs column-wise (one matrix per modality plus a label
matrix); row i of every matrix belongs to the same video. Arrays are frozen
after construction so datasets can be shared with evaluation workers.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from engine import ContractViolation
from .errors import GenerationError

log = logging.getLogger(__name__)

AUDIO = "audio"
VISUAL = "visual"
MODALITIES: Tuple[str, str] = (AUDIO, VISUAL)

DEFAULT_AUDIO_DIM = 128
DEFAULT_VISUAL_DIM = 1024
CENTROID_RETRIES = 1000


def other(modality: str) -> str:
    if modality == AUDIO:
        return VISUAL
    if modality == VISUAL:
        return AUDIO
    raise ContractViolation(f"unknown modality {modality!r}")


def _check_label(label: np.ndarray, where: str):
    if not np.isin(label, (0, 1)).all():
        raise ContractViolation(f"{where}: label entries must be 0 or 1")
    if label.sum() < 1:
        raise ContractViolation(f"{where}: label has no category set")


@dataclass(frozen=True)
class AVPair:
    audio: np.ndarray
    visual: np.ndarray
    label: np.ndarray

    def __post_init__(self):
        _check_label(np.asarray(self.label), "AVPair")
        if not (np.all(np.isfinite(self.audio)) and np.all(np.isfinite(self.visual))):
            raise ContractViolation("AVPair: feature vectors must be finite")


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    audio: np.ndarray
    visual: np.ndarray
    labels: np.ndarray
    split: str = "all"
    provenance: str = ""

    def __post_init__(self):
        audio = _frozen(self.audio, np.float64)
        visual = _frozen(self.visual, np.float64)
        labels = _frozen(self.labels, np.uint8)
        if audio.ndim != 2 or visual.ndim != 2 or labels.ndim != 2:
            raise ContractViolation("Dataset: audio, visual and labels must be matrices")
        n = audio.shape[0]
        if visual.shape[0] != n or labels.shape[0] != n:
            raise ContractViolation(
                f"Dataset: row counts differ (audio {n}, visual {visual.shape[0]}, labels {labels.shape[0]})")
        if not (np.all(np.isfinite(audio)) and np.all(np.isfinite(visual))):
            raise ContractViolation("Dataset: feature values must be finite")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ContractViolation("Dataset: label entries must be 0 or 1")
        empty = np.flatnonzero(labels.sum(axis=1) == 0)
        if empty.size:
            raise ContractViolation(f"Dataset: row {int(empty[0])} has no category set")
        object.__setattr__(self, "audio", audio)
        object.__setattr__(self, "visual", visual)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.audio.shape[0]

    def __getitem__(self, i: int) -> AVPair:
        return AVPair(self.audio[i], self.visual[i], self.labels[i])

    @property
    def categories(self) -> int:
        return self.labels.shape[1]

    @property
    def audio_dim(self) -> int:
        return self.audio.shape[1]

    @property
    def visual_dim(self) -> int:
        return self.visual.shape[1]

    def features(self, modality: str) -> np.ndarray:
        if modality == AUDIO:
            return self.audio
        if modality == VISUAL:
            return self.visual
        raise ContractViolation(f"unknown modality {modality!r}")

    def subset(self, indices: Sequence[int], split: Optional[str] = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.audio[idx], self.visual[idx], self.labels[idx],
                       split=split or self.split, provenance=self.provenance)


def primary_class(labels: np.ndarray) -> np.ndarray:
    """First set category of each row; used for stratification."""
    return np.argmax(labels, axis=1)


def _centroids(rng: np.random.Generator, c: int, dim: int, separation: float) -> np.ndarray:
    placed = []
    for j in range(c):
        for _ in range(CENTROID_RETRIES):
            cand = rng.normal(0.0, separation, size=dim)
            if all(np.linalg.norm(cand - p) >= separation for p in placed):
                placed.append(cand)
                break
        else:
            raise GenerationError(
                f"could not place centroid {j} of {c} at separation {separation} in {dim} dims "
                f"after {CENTROID_RETRIES} tries")
    return np.array(placed)


def synth_generate(c: int, n_per_class: int, audio_dim: int = DEFAULT_AUDIO_DIM,
                   visual_dim: int = DEFAULT_VISUAL_DIM, class_separation: float = 10.0,
                   noise_sigma: float = 1.0, seed: int = 0) -> Dataset:
    """Gaussian class clusters per modality, one-hot labels, class-major order."""
    if c < 1:
        raise GenerationError(f"need at least one class, got c={c}")
    if n_per_class < 1:
        raise GenerationError(f"need at least one sample per class, got n_per_class={n_per_class}")
    if class_separation <= 0:
        raise GenerationError(f"class_separation must be > 0, got {class_separation}")
    if noise_sigma < 0:
        raise GenerationError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if audio_dim < 1 or visual_dim < 1:
        raise GenerationError(f"feature dims must be >= 1, got {audio_dim}/{visual_dim}")
    if c == 1:
        log.warning("single-class dataset: no negatives exist, metric losses will be inert")

    rng = np.random.default_rng(seed)
    audio_c = _centroids(rng, c, audio_dim, class_separation)
    visual_c = _centroids(rng, c, visual_dim, class_separation)

    cls = np.repeat(np.arange(c), n_per_class)
    audio = audio_c[cls] + noise_sigma * rng.normal(size=(cls.size, audio_dim))
    visual = visual_c[cls] + noise_sigma * rng.normal(size=(cls.size, visual_dim))
    labels = np.eye(c, dtype=np.uint8)[cls]
    return Dataset(audio, visual, labels, split="all",
                   provenance=f"synthetic seed={seed} c={c} n_per_class={n_per_class} "
                              f"separation={class_separation} noise={noise_sigma}")


def stratified_split(dataset: Dataset, train_fraction: float = 0.8,
                     seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Seeded per-class split; indices inside each split stay in ascending order."""
    if not 0.0 < train_fraction < 1.0:
        raise ContractViolation(f"train_fraction must be in (0, 1), got {train_fraction}")
    train_idx, test_idx = split_indices(dataset.labels, train_fraction, seed)
    return dataset.subset(train_idx, "train"), dataset.subset(test_idx, "test")


def split_indices(labels: np.ndarray, train_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    cls = primary_class(labels)
    train, test = [], []
    for j in np.unique(cls):
        members = np.flatnonzero(cls == j)
        members = members[rng.permutation(members.size)]
        cut = int(round(train_fraction * members.size))
        if members.size > 1:
            cut = min(max(cut, 1), members.size - 1)
        train.extend(members[:cut])
        test.extend(members[cut:])
    return np.sort(np.array(train, dtype=np.intp)), np.sort(np.array(test, dtype=np.intp))
