"""Polygon types, WKT/GeoJSON ingestion and scalar measurements.

Rings store their closing vertex explicitly (first == last), and that
duplicate is counted wherever vertices are counted or averaged.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from . import kernels


class GeometryError(ValueError):
    """Raised for malformed or unsupported geometry input."""


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite coordinate ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y


class Ring:
    """Closed vertex ring backed by a read-only ``(n, 2)`` float array."""

    __slots__ = ("_coords",)

    def __init__(self, coords):
        arr = np.array(coords, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise GeometryError(f"ring coordinates must have shape (n, 2), got {arr.shape}")
        if arr.shape[0] == 0:
            raise GeometryError("empty ring")
        if not np.all(np.isfinite(arr)):
            raise GeometryError("ring contains non-finite coordinates")
        if not np.array_equal(arr[0], arr[-1]):
            raise GeometryError("ring not closed: first vertex differs from last")
        if arr.shape[0] < 4:
            raise GeometryError(
                f"ring needs at least 4 stored vertices (3 distinct + closing), got {arr.shape[0]}")
        arr.flags.writeable = False
        self._coords = arr

    @property
    def coords(self) -> np.ndarray:
        return self._coords

    def __len__(self):
        return self._coords.shape[0]

    def __eq__(self, other):
        return isinstance(other, Ring) and np.array_equal(self._coords, other._coords)

    def __hash__(self):
        return hash(self._coords.tobytes())

    def __repr__(self):
        return f"Ring(<{len(self)} vertices>)"

    def translated(self, dx: float, dy: float) -> "Ring":
        return Ring(self._coords + np.array([dx, dy]))

    def scaled(self, factor: float) -> "Ring":
        return Ring(self._coords * factor)


@dataclass(frozen=True)
class Geometry:
    """A polygon (one ring) or multipolygon (several rings), holes excluded."""

    rings: Tuple[Ring, ...]
    id: str = ""

    def __post_init__(self):
        rings = tuple(self.rings)
        if not rings:
            raise GeometryError("geometry must have at least one ring")
        for r in rings:
            if not isinstance(r, Ring):
                raise GeometryError(f"expected Ring, got {type(r).__name__}")
        object.__setattr__(self, "rings", rings)

    @classmethod
    def from_coords(cls, rings: Iterable[Sequence[Sequence[float]]], id: str = "") -> "Geometry":
        return cls(tuple(Ring(r) for r in rings), id)

    @property
    def vertex_count(self) -> int:
        return sum(len(r) for r in self.rings)

    def all_coords(self) -> np.ndarray:
        return np.concatenate([r.coords for r in self.rings], axis=0)

    def translated(self, dx: float, dy: float) -> "Geometry":
        return Geometry(tuple(r.translated(dx, dy) for r in self.rings), self.id)

    def scaled(self, factor: float) -> "Geometry":
        return Geometry(tuple(r.scaled(factor) for r in self.rings), self.id)

    def with_id(self, id: str) -> "Geometry":
        return Geometry(self.rings, id)

    def __eq__(self, other):
        return (isinstance(other, Geometry) and self.id == other.id
                and len(self.rings) == len(other.rings)
                and all(a == b for a, b in zip(self.rings, other.rings)))

    def __hash__(self):
        return hash((self.id, self.rings))


@dataclass(frozen=True)
class GeometryStats:
    area: float
    vertex_count: int
    boundary_length: float


# --------------------------------------------------------------------------
# WKT
# --------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
                    r"|(?P<word>[A-Za-z]+)|(?P<punct>[(),]))")


class _WktReader:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self._peeked = None

    def _error(self, msg: str, pos: int = None):
        pos = self.pos if pos is None else pos
        return GeometryError(f"WKT syntax error at position {pos}: {msg}")

    def peek(self):
        if self._peeked is None:
            rest = self.text[self.pos:]
            if not rest.strip():
                self._peeked = ("eof", None, len(self.text))
            else:
                m = _TOKEN.match(self.text, self.pos)
                if m is None:
                    start = len(self.text) - len(rest.lstrip())
                    raise self._error(f"unexpected character {self.text[start]!r}", start)
                kind = m.lastgroup
                self._peeked = (kind, m.group(kind), m.start(kind), m.end())
        return self._peeked

    def next(self):
        tok = self.peek()
        self._peeked = None
        if tok[0] != "eof":
            self.pos = tok[3]
        return tok

    def expect(self, punct: str):
        tok = self.next()
        if tok[0] != "punct" or tok[1] != punct:
            found = "end of input" if tok[0] == "eof" else repr(tok[1])
            raise self._error(f"expected {punct!r}, found {found}", tok[2])

    def number(self) -> float:
        tok = self.next()
        if tok[0] != "num":
            found = "end of input" if tok[0] == "eof" else repr(tok[1])
            raise self._error(f"expected number, found {found}", tok[2])
        return float(tok[1])

    def ring(self) -> Ring:
        start = self.peek()[2]
        self.expect("(")
        pts = []
        while True:
            x = self.number()
            y = self.number()
            if self.peek()[0] == "num":
                raise self._error("only 2D coordinates are supported", self.peek()[2])
            pts.append((x, y))
            tok = self.next()
            if tok[0] == "punct" and tok[1] == ",":
                continue
            if tok[0] == "punct" and tok[1] == ")":
                break
            found = "end of input" if tok[0] == "eof" else repr(tok[1])
            raise self._error(f"expected ',' or ')', found {found}", tok[2])
        try:
            return Ring(pts)
        except GeometryError as exc:
            raise GeometryError(f"invalid ring at position {start}: {exc}") from None

    def polygon(self) -> Ring:
        start = self.peek()[2]
        self.expect("(")
        outer = self.ring()
        tok = self.peek()
        if tok[0] == "punct" and tok[1] == ",":
            raise GeometryError(f"interior ring present at position {tok[2]}: polygon holes are not supported")
        self.expect(")")
        del start
        return outer


def parse_wkt(text: str, id: str = "") -> Geometry:
    """Parse a WKT ``POLYGON`` or ``MULTIPOLYGON`` into a :class:`Geometry`.

    Errors carry the character offset of the offending token.  Polygons
    with interior rings are rejected.
    """
    rd = _WktReader(text)
    tok = rd.next()
    if tok[0] != "word":
        raise rd._error("expected geometry type", tok[2])
    kind = tok[1].upper()
    if kind not in ("POLYGON", "MULTIPOLYGON"):
        raise GeometryError(f"unsupported geometry type {tok[1]!r}")
    nxt = rd.peek()
    if nxt[0] == "word":
        raise GeometryError(f"unsupported WKT modifier {nxt[1]!r} at position {nxt[2]}")
    if kind == "POLYGON":
        rings = [rd.polygon()]
    else:
        rd.expect("(")
        rings = [rd.polygon()]
        while True:
            t = rd.next()
            if t[0] == "punct" and t[1] == ",":
                rings.append(rd.polygon())
                continue
            if t[0] == "punct" and t[1] == ")":
                break
            found = "end of input" if t[0] == "eof" else repr(t[1])
            raise rd._error(f"expected ',' or ')', found {found}", t[2])
    t = rd.next()
    if t[0] != "eof":
        raise rd._error(f"trailing content {t[1]!r}", t[2])
    return Geometry(tuple(rings), id)


def _fmt(v: float) -> str:
    return repr(float(v))


def to_wkt(g: Geometry) -> str:
    """Serialize with shortest round-tripping float text."""
    def ring_text(r: Ring) -> str:
        return "(" + ", ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in r.coords) + ")"

    if len(g.rings) == 1:
        return f"POLYGON ({ring_text(g.rings[0])})"
    return "MULTIPOLYGON (" + ", ".join(f"({ring_text(r)})" for r in g.rings) + ")"


# --------------------------------------------------------------------------
# GeoJSON
# --------------------------------------------------------------------------

def _geojson_rings(geom: dict, where: str) -> List[Ring]:
    if not isinstance(geom, dict) or "type" not in geom:
        raise GeometryError(f"{where}: missing geometry")
    gtype = geom["type"]
    coords = geom.get("coordinates")
    if gtype == "Polygon":
        polys = [coords]
    elif gtype == "MultiPolygon":
        polys = coords
    else:
        raise GeometryError(f"{where}: unsupported geometry type {gtype!r}")
    if not isinstance(polys, list) or not polys:
        raise GeometryError(f"{where}: empty coordinates")
    rings = []
    for p in polys:
        if not isinstance(p, list) or not p:
            raise GeometryError(f"{where}: malformed polygon coordinates")
        if len(p) > 1:
            raise GeometryError(f"{where}: interior ring present; polygon holes are not supported")
        try:
            rings.append(Ring([(float(c[0]), float(c[1])) for c in p[0]]))
        except (TypeError, IndexError) as exc:
            raise GeometryError(f"{where}: malformed coordinates ({exc})") from None
        except GeometryError as exc:
            raise GeometryError(f"{where}: {exc}") from None
    return rings


def parse_geojson(text: str, label_property: str = "label") -> List[Tuple[Geometry, str]]:
    """Read a FeatureCollection into ``(geometry, label)`` pairs, input order kept.

    Feature ids come from the feature's ``id`` member when present, else the
    feature index.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GeometryError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise GeometryError("expected a GeoJSON FeatureCollection")
    out = []
    for i, feat in enumerate(doc.get("features", [])):
        where = f"feature {i}"
        props = feat.get("properties") or {}
        if label_property not in props:
            raise GeometryError(f"{where}: missing label property {label_property!r}")
        rings = _geojson_rings(feat.get("geometry"), where)
        fid = feat.get("id", i)
        out.append((Geometry(tuple(rings), str(fid)), str(props[label_property])))
    return out


# --------------------------------------------------------------------------
# Measurements
# --------------------------------------------------------------------------

def vertex_mean(g: Geometry) -> Point:
    """Mean of every stored vertex, closing duplicates included."""
    m = g.all_coords().mean(axis=0)
    return Point(float(m[0]), float(m[1]))


def ring_area(coords: np.ndarray) -> float:
    x, y = coords[:, 0], coords[:, 1]
    return 0.5 * abs(float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1])))


def ring_length(coords: np.ndarray) -> float:
    return float(np.hypot(*np.diff(coords, axis=0).T).sum())


def stats(g: Geometry) -> GeometryStats:
    """Area, stored-vertex count and boundary length.

    Area is the absolute shoelace value per ring, summed over rings.  For
    a self-intersecting ring the signed lobes cancel, so a symmetric
    bowtie reports zero area.
    """
    area = sum(ring_area(r.coords) for r in g.rings)
    length = sum(ring_length(r.coords) for r in g.rings)
    return GeometryStats(area=area, vertex_count=g.vertex_count, boundary_length=length)


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from points ``p`` (n, 2) to the segment ``a``-``b``."""
    d = b - a
    L2 = float(d @ d)
    if L2 == 0.0:
        return np.hypot(*(p - a).T)
    t = np.clip(((p - a) @ d) / L2, 0.0, 1.0)
    proj = a + t[:, None] * d
    return np.hypot(*(p - proj).T)


def douglas_peucker(ring: Ring, epsilon: float) -> Ring:
    """Simplify a closed ring with the Douglas-Peucker algorithm.

    The ring is cut at the vertex farthest from the start vertex; both open
    chains are simplified independently and rejoined, so the start vertex
    and the cut vertex always survive.  A vertex is dropped when its
    distance to the simplified segment is at most ``epsilon``.  If the
    result would collapse below three distinct vertices, the vertex
    deviating most from the start-cut chord is kept as well.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    c = ring.coords
    n = len(c)
    dist0 = np.hypot(*(c - c[0]).T)
    k = int(np.argmax(dist0))
    keep = np.zeros(n, dtype=bool)
    keep[: k + 1] |= kernels.dp_keep(np.ascontiguousarray(c[: k + 1]), float(epsilon))
    keep[k:] |= kernels.dp_keep(np.ascontiguousarray(c[k:]), float(epsilon))
    if keep.sum() < 4:
        dev = point_segment_distance(c, c[0], c[k])
        dev[keep] = -1.0
        keep[int(np.argmax(dev))] = True
    return Ring(c[keep])
