"""Elliptic Fourier descriptors (Kuhl & Giardina, 1982) and shallow feature vectors.

The contour is parametrized by arc length ``t`` in ``[0, T)``; harmonic ``n``
contributes ``a_n cos(2 pi n t/T) + b_n sin(2 pi n t/T)`` to x and the
``c_n``/``d_n`` pair to y.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .geometry import Geometry, GeometryError, Point, Ring, ring_area, stats

SEARCH_ORDERS = (0, 1, 2, 3, 4, 6, 8, 12, 16, 20, 24)
FEATURE_LAYOUT_VERSION = 1


class EfdError(ValueError):
    pass


@dataclass(frozen=True)
class EfdCoefficients:
    harmonics: np.ndarray  # (order, 4): a, b, c, d
    locus: Tuple[float, float] = (0.0, 0.0)

    @property
    def order(self) -> int:
        return self.harmonics.shape[0]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: Tuple[str, ...]


def _clean_contour(coords: np.ndarray) -> np.ndarray:
    # drop zero-length edges (repeated vertices); the closing vertex stays
    keep = np.ones(len(coords), dtype=bool)
    keep[1:] = np.any(np.diff(coords, axis=0) != 0, axis=1)
    c = coords[keep]
    if len(c) < 4 or not np.array_equal(c[0], c[-1]):
        raise EfdError("degenerate ring: fewer than 3 distinct vertices")
    return c


def efd(ring, order: int) -> EfdCoefficients:
    """Elliptic Fourier coefficients of a closed ring up to ``order`` harmonics."""
    if order < 1:
        raise ValueError("order must be >= 1")
    coords = ring.coords if isinstance(ring, Ring) else np.asarray(ring, dtype=np.float64)
    c = _clean_contour(coords)
    dxy = np.diff(c, axis=0)
    dt = np.hypot(dxy[:, 0], dxy[:, 1])
    t = np.concatenate(([0.0], np.cumsum(dt)))
    T = t[-1]
    n = np.arange(1, order + 1)[:, None]
    phi = 2.0 * np.pi * n * t / T
    dcos = np.cos(phi[:, 1:]) - np.cos(phi[:, :-1])
    dsin = np.sin(phi[:, 1:]) - np.sin(phi[:, :-1])
    consts = T / (2.0 * n[:, 0] ** 2 * np.pi ** 2)
    xs, ys = dxy[:, 0] / dt, dxy[:, 1] / dt
    coeffs = np.stack([
        consts * (dcos @ xs),
        consts * (dsin @ xs),
        consts * (dcos @ ys),
        consts * (dsin @ ys),
    ], axis=1)

    # DC terms
    xi = np.cumsum(dxy[:, 0]) - xs * t[1:]
    delta = np.cumsum(dxy[:, 1]) - ys * t[1:]
    dt2 = np.diff(t ** 2)
    A0 = np.sum(xs / 2.0 * dt2 + xi * dt) / T
    C0 = np.sum(ys / 2.0 * dt2 + delta * dt) / T
    return EfdCoefficients(coeffs, (float(c[0, 0] + A0), float(c[0, 1] + C0)))


def normalize_efd(coef: EfdCoefficients) -> EfdCoefficients:
    """Make the coefficients start-point, rotation, scale and translation invariant.

    The parameter origin is moved to the first ellipse's semi-major axis,
    the coordinate frame is rotated onto that axis and everything is
    divided by the semi-major length.  Afterwards the first harmonic is
    ``(1, 0, 0, d1)`` with ``|d1| <= 1``; the locus is zeroed.

    The semi-major axis has two ends, so a transformed copy may come back
    with every even harmonic negated (see :func:`sign_variants`).
    """
    h = np.array(coef.harmonics, dtype=np.float64)
    a, b, c, d = h[0]
    theta = 0.5 * np.arctan2(2.0 * (a * b + c * d), a * a - b * b + c * c - d * d)
    n = np.arange(1, h.shape[0] + 1)
    cos_t, sin_t = np.cos(n * theta), np.sin(n * theta)
    # [[a, b], [c, d]] @ [[cos, -sin], [sin, cos]]
    a2 = h[:, 0] * cos_t + h[:, 1] * sin_t
    b2 = -h[:, 0] * sin_t + h[:, 1] * cos_t
    c2 = h[:, 2] * cos_t + h[:, 3] * sin_t
    d2 = -h[:, 2] * sin_t + h[:, 3] * cos_t
    psi = np.arctan2(c2[0], a2[0])
    cp, sp = np.cos(psi), np.sin(psi)
    # [[cos, sin], [-sin, cos]] @ [[a, b], [c, d]]
    out = np.stack([cp * a2 + sp * c2, cp * b2 + sp * d2, -sp * a2 + cp * c2, -sp * b2 + cp * d2], axis=1)
    size = out[0, 0]
    if not size > 1e-300 or not np.isfinite(size):
        raise EfdError("degenerate first harmonic; cannot normalize")
    out /= size
    out[0, 1] = 0.0
    out[0, 2] = 0.0
    out[0, 0] = 1.0
    return EfdCoefficients(out, (0.0, 0.0))


def sign_variants(harmonics: np.ndarray):
    """Both equivalent normalized forms: as given and with even harmonics negated."""
    flip = np.where(np.arange(1, harmonics.shape[0] + 1) % 2 == 0, -1.0, 1.0)[:, None]
    return harmonics, harmonics * flip


def reconstruct(coef: EfdCoefficients, samples: int = 100) -> List[Point]:
    """Evaluate the truncated series at ``samples`` uniform parameter values in ``[0, T)``."""
    pts = reconstruct_array(coef, samples)
    return [Point(float(x), float(y)) for x, y in pts]


def reconstruct_array(coef: EfdCoefficients, samples: int = 100) -> np.ndarray:
    if samples < 3:
        raise ValueError("samples must be >= 3")
    t = np.arange(samples) / samples
    n = np.arange(1, coef.order + 1)[:, None]
    arg = 2.0 * np.pi * n * t
    cos, sin = np.cos(arg), np.sin(arg)
    h = coef.harmonics
    x = coef.locus[0] + h[:, 0] @ cos + h[:, 1] @ sin
    y = coef.locus[1] + h[:, 2] @ cos + h[:, 3] @ sin
    return np.stack([x, y], axis=1)


def feature_layout(order: int) -> Tuple[str, ...]:
    names: List[str] = []
    if order >= 1:
        names += ["A0", "C0"]
        for prefix in ("efd", "nefd"):
            for k in range(1, order + 1):
                names += [f"{prefix}_a{k}", f"{prefix}_b{k}", f"{prefix}_c{k}", f"{prefix}_d{k}"]
    names += ["area", "vertex_count", "boundary_length"]
    return tuple(names)


def feature_length(order: int) -> int:
    return 3 if order == 0 else 3 + 8 * order + 2


def contour_ring(g: Geometry) -> Ring:
    """The ring descriptors are computed on: the largest-area ring (first on ties)."""
    if len(g.rings) == 1:
        return g.rings[0]
    areas = [ring_area(r.coords) for r in g.rings]
    return g.rings[int(np.argmax(areas))]


def features(g: Geometry, order: int) -> FeatureVector:
    """Raw and normalized descriptors plus area, vertex count and boundary length."""
    if order < 0:
        raise ValueError("order must be >= 0")
    st = stats(g)
    tail = [st.area, float(st.vertex_count), st.boundary_length]
    if order == 0:
        return FeatureVector(np.array(tail), feature_layout(0))
    try:
        raw = efd(contour_ring(g), order)
        norm = normalize_efd(raw)
    except (EfdError, GeometryError) as exc:
        raise EfdError(f"geometry {g.id!r}: {exc}") from None
    values = np.concatenate([raw.locus, raw.harmonics.ravel(), norm.harmonics.ravel(), tail])
    return FeatureVector(values, feature_layout(order))


def feature_matrix(geoms, order: int) -> np.ndarray:
    if not geoms:
        return np.zeros((0, feature_length(order)))
    return np.stack([features(g, order).values for g in geoms])
