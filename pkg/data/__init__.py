# data/__init__.py
from .errors import BatchingError, GenerationError, LoadError
from .dataset import (AUDIO, MODALITIES, VISUAL, AVPair, Dataset, other, primary_class,
                      split_indices, stratified_split, synth_generate)
from .fileformats import (load_dataset, load_features, load_labels, save_dataset, write_avf,
                          write_avl)
from .batching import BatchPlan, make_batches, plan_epoch

__all__ = [
    "BatchingError", "GenerationError", "LoadError",
    "AUDIO", "MODALITIES", "VISUAL", "AVPair", "Dataset", "other", "primary_class",
    "split_indices", "stratified_split", "synth_generate",
    "load_dataset", "load_features", "load_labels", "save_dataset", "write_avf", "write_avl",
    "BatchPlan", "make_batches", "plan_epoch",
]
