"""Pure-Python (numpy) versions of the hot kernels.

Each function mirrors the compiled version in ``_speedups.pyx`` operation for
operation so both backends return bit-identical results.
"""
import numpy as np

BACKEND = "python"


def dp_keep(coords, epsilon):
    """Douglas-Peucker keep-mask for an open chain; both endpoints kept."""
    n = coords.shape[0]
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[n - 1] = True
    stack = [(0, n - 1)]
    px = coords[:, 0]
    py = coords[:, 1]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        ax, ay = px[i], py[i]
        dx = px[j] - ax
        dy = py[j] - ay
        L2 = dx * dx + dy * dy
        qx = px[i + 1:j] - ax
        qy = py[i + 1:j] - ay
        if L2 == 0.0:
            dist = np.hypot(qx, qy)
        else:
            t = (qx * dx + qy * dy) / L2
            t = np.minimum(np.maximum(t, 0.0), 1.0)
            dist = np.hypot(qx - t * dx, qy - t * dy)
        k = int(np.argmax(dist))
        if dist[k] > epsilon:
            k += i + 1
            keep[k] = True
            stack.append((k, j))
            stack.append((i, k))
    return keep


def gini_best_split(X, y, n_classes):
    """Best CART split by summed child Gini mass ``n_l*G_l + n_r*G_r``.

    Returns ``(feature, threshold, criterion)``; ``feature == -1`` when no
    split improves on the parent.  Ties go to the lower feature index, then
    the lower threshold.
    """
    n, d = X.shape
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    best_crit = n - (counts * counts).sum() / n
    best_f, best_t = -1, 0.0
    if n < 2:
        return best_f, best_t, best_crit
    onehot = np.zeros((n, n_classes), dtype=np.float64)
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        onehot[:] = 0.0
        onehot[np.arange(n), y[order]] = 1.0
        left = np.cumsum(onehot, axis=0)[:-1]
        right = counts - left
        sql = (left * left).sum(axis=1)
        sqr = (right * right).sum(axis=1)
        crit = (nl - sql / nl) + (nr - sqr / nr)
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        crit = np.where(valid, crit, np.inf)
        p = int(np.argmin(crit))
        if crit[p] < best_crit:
            best_crit = float(crit[p])
            best_f = f
            thr = (xs[p] + xs[p + 1]) / 2.0
            if thr >= xs[p + 1]:
                thr = xs[p]
            best_t = float(thr)
    return best_f, best_t, best_crit


_TAU = 1e-12


def smo_solve(Q, y, C, tol, max_iter):
    """SMO on the SVM dual with maximal-violating-pair selection.

    ``Q`` is ``y_i y_j K(x_i, x_j)``.  Returns ``(alpha, grad, n_iter,
    converged)`` where ``grad`` is the dual gradient ``Q alpha - 1``.
    """
    n = Q.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    QD = np.diagonal(Q).copy()
    pos = y > 0
    converged = False
    it = 0
    while True:
        v = -y * G
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        if not up.any() or not low.any():
            converged = True
            break
        vu = np.where(up, v, -np.inf)
        vl = np.where(low, v, np.inf)
        i = int(np.argmax(vu))
        j = int(np.argmin(vl))
        if vu[i] - vl[j] < tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        ai_old = alpha[i]
        aj_old = alpha[j]
        ai, aj = _pair_update(Q, QD, G, y, alpha, i, j, C)
        alpha[i] = ai
        alpha[j] = aj
        dai = ai - ai_old
        daj = aj - aj_old
        G += Q[i] * dai + Q[j] * daj
    return alpha, G, it, converged


def _pair_update(Q, QD, G, y, alpha, i, j, C):
    ai = alpha[i]
    aj = alpha[j]
    if y[i] != y[j]:
        quad = QD[i] + QD[j] + 2.0 * Q[i, j]
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
        quad = QD[i] + QD[j] - 2.0 * Q[i, j]
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
    return ai, aj
