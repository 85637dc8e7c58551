"""Slow, independent reference computations used as test oracles."""
import math

import numpy as np


def random_star_polygon(rng, n_min=5, n_max=20, jitter=0.4):
    """Closed star-shaped polygon with ``n_min..n_max`` distinct vertices."""
    n = int(rng.integers(n_min, n_max + 1))
    a = np.sort(rng.uniform(0, 2 * np.pi, n))
    r = 1.0 + jitter * rng.uniform(-1, 1, n)
    pts = np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
    return np.vstack([pts, pts[:1]])


def efd_loop(coords, order):
    """Textbook per-segment loop for the harmonic coefficients and the locus."""
    pts = [tuple(p) for p in coords]
    segs = []
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        dx, dy = x1 - x0, y1 - y0
        dt = math.hypot(dx, dy)
        if dt > 0:
            segs.append((dx, dy, dt))
    T = sum(s[2] for s in segs)
    out = []
    for n in range(1, order + 1):
        k = T / (2 * n * n * math.pi * math.pi)
        a = b = c = d = 0.0
        t_prev = 0.0
        for dx, dy, dt in segs:
            t = t_prev + dt
            w = 2 * math.pi * n / T
            dcos = math.cos(w * t) - math.cos(w * t_prev)
            dsin = math.sin(w * t) - math.sin(w * t_prev)
            a += dx / dt * dcos
            b += dx / dt * dsin
            c += dy / dt * dcos
            d += dy / dt * dsin
            t_prev = t
        out.append((k * a, k * b, k * c, k * d))
    # locus: mean of the contour over arc length (integral of each linear segment)
    ax = ay = 0.0
    x, y = pts[0]
    for dx, dy, dt in segs:
        ax += (x + dx / 2) * dt
        ay += (y + dy / 2) * dt
        x, y = x + dx, y + dy
    return np.array(out), (ax / T, ay / T)


def sample_boundary(coords, n):
    """``n`` points spaced uniformly by arc length along a closed ring."""
    seg = np.diff(coords, axis=0)
    lens = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate(([0.0], np.cumsum(lens)))
    t = np.arange(n) / n * cum[-1]
    idx = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, len(seg) - 1)
    frac = (t - cum[idx]) / np.where(lens[idx] > 0, lens[idx], 1.0)
    return coords[idx] + frac[:, None] * seg[idx]


def distance_to_polyline(points, coords):
    """Brute force: distance of every point to the nearest segment of ``coords``."""
    best = np.full(len(points), np.inf)
    for a, b in zip(coords[:-1], coords[1:]):
        d = b - a
        L2 = d @ d
        t = np.zeros(len(points)) if L2 == 0 else np.clip((points - a) @ d / L2, 0, 1)
        proj = a + t[:, None] * d
        best = np.minimum(best, np.hypot(*(points - proj).T))
    return best


def hausdorff(curve_a, curve_b):
    """Symmetric Hausdorff distance between two closed polylines given as closed arrays."""
    return max(distance_to_polyline(curve_a, curve_b).max(), distance_to_polyline(curve_b, curve_a).max())


def ellipse_fit_residual(points):
    """Smallest normalized singular value of the general-conic design matrix."""
    x, y = points[:, 0], points[:, 1]
    D = np.stack([x * x, x * y, y * y, x, y, np.ones_like(x)], axis=1)
    s = np.linalg.svd(D, compute_uv=False)
    return s[-1] / s[0]


def numeric_grad(f, x, eps=1e-5):
    """Central finite differences of the scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def grad_rel_error(analytic, numeric):
    """Largest absolute discrepancy relative to the gradient's scale."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)
