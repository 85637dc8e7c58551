# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_purepy`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport hypot, INFINITY

cnp.import_array()

BACKEND = "cython"


def dp_keep(const double[:, ::1] coords, double epsilon):
    cdef Py_ssize_t n = coords.shape[0]
    keep_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] keep = keep_arr
    cdef Py_ssize_t[::1] stack = np.empty(2 * n + 2, dtype=np.intp)
    cdef Py_ssize_t top = 0, i, j, k, best
    cdef double ax, ay, dx, dy, L2, qx, qy, t, dist, dmax
    keep[0] = 1
    keep[n - 1] = 1
    stack[0] = 0
    stack[1] = n - 1
    top = 2
    while top > 0:
        top -= 2
        i = stack[top]
        j = stack[top + 1]
        if j - i < 2:
            continue
        ax = coords[i, 0]
        ay = coords[i, 1]
        dx = coords[j, 0] - ax
        dy = coords[j, 1] - ay
        L2 = dx * dx + dy * dy
        dmax = -1.0
        best = -1
        for k in range(i + 1, j):
            qx = coords[k, 0] - ax
            qy = coords[k, 1] - ay
            if L2 == 0.0:
                dist = hypot(qx, qy)
            else:
                t = (qx * dx + qy * dy) / L2
                if t < 0.0:
                    t = 0.0
                if t > 1.0:
                    t = 1.0
                dist = hypot(qx - t * dx, qy - t * dy)
            if dist > dmax:
                dmax = dist
                best = k
        if dmax > epsilon:
            keep[best] = 1
            # push right then left so the left half is processed first
            stack[top] = best
            stack[top + 1] = j
            stack[top + 2] = i
            stack[top + 3] = best
            top += 4
    return keep_arr.astype(bool)


def gini_best_split(const double[:, :] X, const long[:] y, int n_classes):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t f, p, c
    cdef double[::1] counts = np.bincount(np.asarray(y), minlength=n_classes).astype(np.float64)
    cdef double[::1] left = np.zeros(n_classes)
    cdef double sq = 0.0, sql, sqr, nl, nr, crit, r, thr
    for c in range(n_classes):
        sq += counts[c] * counts[c]
    cdef double best_crit = n - sq / n
    cdef int best_f = -1
    cdef double best_t = 0.0
    cdef Py_ssize_t[::1] order
    cdef double[::1] xs = np.empty(n)
    cdef long yc
    if n < 2:
        return best_f, best_t, best_crit
    Xn = np.asarray(X)
    for f in range(d):
        order = np.argsort(Xn[:, f], kind="stable").astype(np.intp)
        for p in range(n):
            xs[p] = X[order[p], f]
        for c in range(n_classes):
            left[c] = 0.0
        for p in range(n - 1):
            yc = y[order[p]]
            left[yc] += 1.0
            if not (xs[p] < xs[p + 1]):
                continue
            sql = 0.0
            sqr = 0.0
            for c in range(n_classes):
                sql += left[c] * left[c]
                r = counts[c] - left[c]
                sqr += r * r
            nl = p + 1
            nr = n - nl
            crit = (nl - sql / nl) + (nr - sqr / nr)
            if crit < best_crit:
                best_crit = crit
                best_f = f
                thr = (xs[p] + xs[p + 1]) / 2.0
                if thr >= xs[p + 1]:
                    thr = xs[p]
                best_t = thr
    return best_f, best_t, best_crit


cdef double _TAU = 1e-12


def smo_solve(const double[:, ::1] Q, const double[::1] y, double C, double tol, long max_iter):
    cdef Py_ssize_t n = Q.shape[0]
    alpha_arr = np.zeros(n)
    G_arr = -np.ones(n)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] G = G_arr
    cdef Py_ssize_t t, i, j
    cdef double v, vmax, vmin, ai, aj, ai_old, aj_old, quad, delta, diff, total, dai, daj
    cdef bint up, low, converged = False
    cdef long it = 0
    while True:
        vmax = -INFINITY
        vmin = INFINITY
        i = -1
        j = -1
        for t in range(n):
            v = -y[t] * G[t]
            if y[t] > 0:
                up = alpha[t] < C
                low = alpha[t] > 0
            else:
                up = alpha[t] > 0
                low = alpha[t] < C
            if up and (i == -1 or v > vmax):
                vmax = v
                i = t
            if low and (j == -1 or v < vmin):
                vmin = v
                j = t
        if i == -1 or j == -1:
            converged = True
            break
        if vmax - vmin < tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        ai = alpha[i]
        aj = alpha[j]
        ai_old = ai
        aj_old = aj
        if y[i] != y[j]:
            quad = Q[i, i] + Q[j, j] + 2.0 * Q[i, j]
            if quad <= 0.0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0.0:
                if aj < 0.0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = -diff
            if diff > 0.0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            quad = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
            if quad <= 0.0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
            else:
                if aj < 0.0:
                    aj = 0.0
                    ai = total
            if total > C:
                if aj > C:
                    aj = C
                    ai = total - C
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = total
        alpha[i] = ai
        alpha[j] = aj
        dai = ai - ai_old
        daj = aj - aj_old
        for t in range(n):
            G[t] += Q[i, t] * dai + Q[j, t] * daj
    return alpha_arr, G_arr, it, converged
