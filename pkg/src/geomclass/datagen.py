"""Deterministic synthetic polygon classification tasks.

Every sample draws from its own PCG64 stream spawned from one
``SeedSequence``, so the dataset is identical regardless of generation order
or platform.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .dataset import Dataset
from .geometry import Geometry, Ring

PRNG = "numpy.PCG64 via SeedSequence.spawn (one stream per sample)"
FIELD_SIZE = 100.0
JITTER = 0.02
SCALE_RANGE = (0.5, 2.0)


def _regular(n, radius=1.0, phase=np.pi / 2):
    a = phase + 2 * np.pi * np.arange(n) / n
    return np.stack([radius * np.cos(a), radius * np.sin(a)], axis=1)


def _star(points=5, inner=0.45):
    outer = _regular(2 * points)
    r = np.where(np.arange(2 * points) % 2 == 0, 1.0, inner)
    return outer * r[:, None]


def _ellipse(n=64, ratio=0.6):
    a = 2 * np.pi * np.arange(n) / n
    return np.stack([np.cos(a), ratio * np.sin(a)], axis=1)


_RECT = np.array([[-0.8, -0.5], [0.8, -0.5], [0.8, 0.5], [-0.8, 0.5]])
_LSHAPE = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], dtype=np.float64)


@dataclass(frozen=True)
class ShapeClass:
    name: str
    base: np.ndarray  # distinct vertices, counter-clockwise
    vertex_range: Tuple[int, int]  # stored distinct vertices after edge subdivision


SHAPES: Dict[str, ShapeClass] = {
    "triangle": ShapeClass("triangle", _regular(3), (3, 7)),
    "rectangle": ShapeClass("rectangle", _RECT, (4, 8)),
    "ellipse64": ShapeClass("ellipse64", _ellipse(), (64, 64)),
    "lshape": ShapeClass("lshape", _LSHAPE, (6, 10)),
    "star5": ShapeClass("star5", _star(), (10, 14)),
}
DEFAULT_CLASSES = ("triangle", "rectangle", "ellipse64", "lshape", "star5")


def _subdivide(base, target, rng):
    # insert extra collinear vertices on randomly chosen edges
    n = len(base)
    extra = target - n
    if extra <= 0:
        return base
    edges = np.sort(rng.integers(0, n, size=extra))
    fracs = rng.uniform(0.05, 0.95, size=extra)
    out = []
    for e in range(n):
        out.append(base[e])
        f = np.sort(fracs[edges == e])
        nxt = base[(e + 1) % n]
        for t in f:
            out.append(base[e] + t * (nxt - base[e]))
    return np.array(out)


def _place(pts, rng, jitter=JITTER):
    pts = pts - pts.mean(axis=0)
    theta = rng.uniform(0.0, 2 * np.pi)
    c, s = np.cos(theta), np.sin(theta)
    pts = pts @ np.array([[c, s], [-s, c]])
    pts = pts * rng.uniform(*SCALE_RANGE)
    diam = np.max(np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1)))
    if jitter > 0:
        pts = pts + rng.normal(0.0, jitter * diam, size=pts.shape)
    pts = np.roll(pts, -int(rng.integers(0, len(pts))), axis=0)
    pts = pts + rng.uniform(0.0, FIELD_SIZE, size=2)
    return np.vstack([pts, pts[:1]])


def _streams(seed, n):
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def sample_shape(shape: ShapeClass, rng: np.random.Generator, jitter: float = JITTER) -> np.ndarray:
    lo, hi = shape.vertex_range
    target = int(rng.integers(lo, hi + 1))
    return _place(_subdivide(shape.base, target, rng), rng, jitter)


def generate(classes: Sequence[str] = DEFAULT_CLASSES, per_class: int = 500, seed: int = 0,
             jitter: float = JITTER) -> List[Tuple[Geometry, int]]:
    """``per_class`` random instances of every shape class, ordered by (class, index)."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    unknown = [c for c in classes if c not in SHAPES]
    if unknown:
        raise ValueError(f"unknown shape classes {unknown}; available: {sorted(SHAPES)}")
    rngs = _streams(seed, len(classes) * per_class)
    out = []
    for ci, name in enumerate(classes):
        for k in range(per_class):
            rng = rngs[ci * per_class + k]
            ring = Ring(sample_shape(SHAPES[name], rng, jitter))
            out.append((Geometry((ring,), f"{name}-{k:05d}"), ci))
    return out


def generate_dataset(classes: Sequence[str] = DEFAULT_CLASSES, per_class: int = 500, seed: int = 0,
                     jitter: float = JITTER) -> Dataset:
    pairs = generate(classes, per_class, seed, jitter)
    return Dataset.from_pairs(pairs, list(classes),
                              meta={"generator": "shapes", "prng": PRNG, "seed": seed,
                                    "per_class": per_class, "jitter": jitter})


# --------------------------------------------------------------------------
# hard pair: rectangles told apart only by aspect ratio
# --------------------------------------------------------------------------

def hard_pair_ranges(overlap: float = 0.3, low: float = 1.2, width: float = 1.0):
    """Aspect-ratio intervals of the two classes; ``overlap`` is the shared fraction."""
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must be in [0, 1]")
    a = (low, low + width)
    shift = width * (1.0 - overlap)
    return a, (low + shift, low + shift + width)


def uniform_bayes_accuracy(ra, rb) -> float:
    """Bayes accuracy for equal-prior uniform densities on intervals ``ra`` and ``rb``.

    Half the integral of ``max(p_a, p_b)``.
    """
    wa, wb = ra[1] - ra[0], rb[1] - rb[0]
    lo, hi = max(ra[0], rb[0]), min(ra[1], rb[1])
    ov = max(0.0, hi - lo)
    integral = (wa - ov) / wa + (wb - ov) / wb + ov * max(1.0 / wa, 1.0 / wb)
    return 0.5 * integral


def generate_hard_pair(per_class: int = 500, seed: int = 0, overlap: float = 0.3,
                       jitter: float = 0.0) -> Dataset:
    """Two rectangle classes whose aspect ratios overlap by ``overlap``.

    Jitter defaults to zero so the aspect ratio is recoverable exactly and
    :func:`uniform_bayes_accuracy` is the true ceiling.
    """
    ranges = hard_pair_ranges(overlap)
    rngs = _streams(seed, 2 * per_class)
    pairs = []
    for ci in range(2):
        for k in range(per_class):
            rng = rngs[ci * per_class + k]
            aspect = rng.uniform(*ranges[ci])
            h = 1.0 / np.sqrt(aspect)
            w = aspect * h
            base = np.array([[-w, -h], [w, -h], [w, h], [-w, h]]) / 2.0
            pairs.append((Geometry((Ring(_place(base, rng, jitter)),), f"aspect{ci}-{k:05d}"), ci))
    return Dataset.from_pairs(pairs, ["low_aspect", "high_aspect"],
                              meta={"generator": "hard_pair", "prng": PRNG, "seed": seed,
                                    "per_class": per_class, "overlap": overlap, "jitter": jitter,
                                    "aspect_ranges": [list(r) for r in ranges],
                                    "bayes_accuracy": uniform_bayes_accuracy(*ranges)})
