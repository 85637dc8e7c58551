"""Labelled geometry collections."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .geometry import Geometry


@dataclass
class Dataset:
    geometries: List[Geometry]
    labels: np.ndarray
    class_names: List[str]
    # optional named index lists, e.g. {"train": [...], "val": [...], "test": [...]}
    splits: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.geometries) != len(self.labels):
            raise ValueError("geometries and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label index outside the class name list")

    def __len__(self):
        return len(self.geometries)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset([self.geometries[i] for i in idx], self.labels[idx], list(self.class_names),
                       meta=dict(self.meta))

    def part(self, name: str) -> "Dataset":
        return self.subset(self.splits[name])

    def pairs(self):
        return list(zip(self.geometries, self.labels.tolist()))

    @classmethod
    def from_pairs(cls, pairs, class_names: Optional[List[str]] = None, **kw) -> "Dataset":
        geoms = [g for g, _ in pairs]
        raw = [y for _, y in pairs]
        if class_names is None:
            if all(isinstance(y, (int, np.integer)) for y in raw):
                class_names = [str(i) for i in range(max(raw) + 1 if raw else 0)]
            else:
                class_names = sorted({str(y) for y in raw})
        if raw and not isinstance(raw[0], (int, np.integer)):
            lookup = {n: i for i, n in enumerate(class_names)}
            raw = [lookup[str(y)] for y in raw]
        return cls(geoms, np.array(raw, dtype=np.int64), list(class_names), **kw)
