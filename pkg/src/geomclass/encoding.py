"""Vertex-vector sequence encoding and length-binned batching.

Every stored vertex becomes a row ``[x, y, r_full, r_sub, r_final]``.  The
flag triple is one-hot: ``r_sub`` closes every ring but the last, ``r_final``
closes the last ring, all other vertices carry ``r_full``.  Padding rows are
all zero, which keeps them distinguishable from real vertices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .geometry import Geometry, GeometryError, Point, Ring, douglas_peucker, stats, vertex_mean

R_FULL, R_SUB, R_FINAL = 2, 3, 4
DEFAULT_MAX_POINTS = 1024
STD_CONVENTION = "population"  # ddof = 0


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class GeometrySequence:
    vectors: np.ndarray  # (m, 5)
    label: int = -1
    id: str = ""

    @property
    def length(self) -> int:
        return self.vectors.shape[0]

    def __len__(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class ScaleFactor:
    s: float
    convention: str = STD_CONVENTION

    def __post_init__(self):
        if not (math.isfinite(self.s) and self.s > 0):
            raise EncodingError(f"scale factor must be positive and finite, got {self.s}")


@dataclass
class Batch:
    """Zero-padded sequences sharing the bin length ``m_bin``."""

    x: np.ndarray  # (b, m_bin, 5)
    labels: np.ndarray  # (b,)
    lengths: np.ndarray  # (b,)
    ids: List[str] = field(default_factory=list)
    bin_index: int = 0

    @property
    def m_bin(self) -> int:
        return self.x.shape[1]

    def __len__(self):
        return self.x.shape[0]

    def unpad(self) -> List[GeometrySequence]:
        return [GeometrySequence(self.x[i, : self.lengths[i]].copy(), int(self.labels[i]), self.ids[i])
                for i in range(len(self))]


def to_sequence(g: Geometry, label: int = -1) -> GeometrySequence:
    """Raw (unnormalized) vertex-vector sequence of ``g``."""
    blocks = []
    last = len(g.rings) - 1
    for k, ring in enumerate(g.rings):
        n = len(ring)
        block = np.zeros((n, 5))
        block[:, :2] = ring.coords
        block[:-1, R_FULL] = 1.0
        block[-1, R_FINAL if k == last else R_SUB] = 1.0
        blocks.append(block)
    return GeometrySequence(np.concatenate(blocks, axis=0), label, g.id)


def from_sequence(seq: GeometrySequence, id: str = None) -> Geometry:
    """Rebuild the rings of a (denormalized) sequence from its stop flags."""
    v = seq.vectors
    real = v[:, 2:].sum(axis=1) > 0
    v = v[real]
    ends = np.flatnonzero((v[:, R_SUB] > 0) | (v[:, R_FINAL] > 0))
    rings, start = [], 0
    for e in ends:
        rings.append(Ring(v[start: e + 1, :2]))
        start = e + 1
    return Geometry(tuple(rings), seq.id if id is None else id)


def bounding_values(g: Geometry):
    """Min and max over all mean-centred coordinate components, x and y jointly."""
    c = g.all_coords()
    centred = c - c.mean(axis=0)
    return float(centred.min()), float(centred.max())


def compute_scale_factor(geoms: Sequence[Geometry]) -> ScaleFactor:
    """Population standard deviation of every geometry's ``(b_min, b_max)`` pair."""
    if len(geoms) == 0:
        raise EncodingError("cannot compute a scale factor of an empty dataset")
    B = np.array([bounding_values(g) for g in geoms]).ravel()
    # sorted so the reduction does not depend on dataset order
    s = float(np.std(np.sort(B)))
    if not s > 0:
        raise EncodingError("degenerate dataset: scale factor is zero")
    return ScaleFactor(s)


def normalize(seq: GeometrySequence, mean: Point, s: ScaleFactor) -> GeometrySequence:
    v = seq.vectors.copy()
    v[:, 0] = (v[:, 0] - mean.x) / s.s
    v[:, 1] = (v[:, 1] - mean.y) / s.s
    return GeometrySequence(v, seq.label, seq.id)


def denormalize(seq: GeometrySequence, mean: Point, s: ScaleFactor) -> GeometrySequence:
    v = seq.vectors.copy()
    v[:, 0] = v[:, 0] * s.s + mean.x
    v[:, 1] = v[:, 1] * s.s + mean.y
    return GeometrySequence(v, seq.label, seq.id)


def encode(g: Geometry, s: ScaleFactor, label: int = -1) -> GeometrySequence:
    """Raw sequence centred on the geometry's own vertex mean and scaled by ``s``."""
    return normalize(to_sequence(g, label), vertex_mean(g), s)


def simplify_if_needed(g: Geometry, max_points: int = DEFAULT_MAX_POINTS,
                       max_doublings: int = 60) -> Geometry:
    """Douglas-Peucker ``g`` until it has at most ``max_points`` stored vertices.

    The tolerance starts at 1% of the mean edge length and doubles per
    attempt.
    """
    if max_points < 8:
        raise ValueError("max_points must be >= 8")
    if g.vertex_count <= max_points:
        return g
    st = stats(g)
    eps = st.boundary_length / st.vertex_count * 0.01
    for _ in range(max_doublings + 1):
        out = Geometry(tuple(douglas_peucker(r, eps) for r in g.rings), g.id)
        if out.vertex_count <= max_points:
            return out
        eps *= 2.0
    raise EncodingError(
        f"geometry {g.id!r}: could not reach {max_points} vertices after {max_doublings} doublings")


def bin_and_pad(seqs: Sequence[GeometrySequence], batch_size: int, n_bin: int = None) -> List[Batch]:
    """Sort longest-first, cut into bins of ``n_bin``, pad each bin to its longest member.

    Bins are further cut into batches of ``batch_size``; the trailing bin
    and batch may be short.  Equal lengths are ordered by id.
    """
    if not seqs:
        raise EncodingError("cannot batch an empty list of sequences")
    if n_bin is None:
        n_bin = 8 * batch_size
    if not (n_bin >= batch_size >= 1):
        raise ValueError("need n_bin >= batch_size >= 1")
    order = sorted(range(len(seqs)), key=lambda i: (-seqs[i].length, seqs[i].id))
    batches = []
    for b, start in enumerate(range(0, len(order), n_bin)):
        members = [seqs[i] for i in order[start:start + n_bin]]
        m_bin = members[0].length
        for k in range(0, len(members), batch_size):
            chunk = members[k:k + batch_size]
            x = np.zeros((len(chunk), m_bin, 5))
            for r, sq in enumerate(chunk):
                x[r, : sq.length] = sq.vectors
            batches.append(Batch(
                x=x,
                labels=np.array([sq.label for sq in chunk], dtype=np.int64),
                lengths=np.array([sq.length for sq in chunk], dtype=np.int64),
                ids=[sq.id for sq in chunk],
                bin_index=b,
            ))
    return batches


def encode_dataset(geoms: Sequence[Geometry], labels: Sequence[int], s: ScaleFactor,
                   max_points: int = DEFAULT_MAX_POINTS) -> List[GeometrySequence]:
    out = []
    for g, y in zip(geoms, labels):
        try:
            g = simplify_if_needed(g, max_points)
        except GeometryError as exc:
            raise EncodingError(f"geometry {g.id!r}: {exc}") from None
        out.append(encode(g, s, int(y)))
    return out
