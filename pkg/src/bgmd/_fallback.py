"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def distances(points, y):
    diff = np.asarray(points, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def column_sq_norms(G):
    G = np.ascontiguousarray(G, dtype=np.float64)
    # axis-0 reduction adds rows one after another, same order as the C loop
    return (G * G).sum(axis=0)


def augmented_column_stats(G, m, gamma):
    P = gamma * np.asarray(G, dtype=np.float64) + m
    return (P * P).sum(axis=0), P.sum(axis=0)


def column_lower_median(G):
    G = np.asarray(G, dtype=np.float64)
    kth = (G.shape[0] + 1) // 2 - 1
    cols = G.T.copy()
    cols.partition(kth, axis=1)
    return cols[:, kth].copy()


def weiszfeld_solve(points, y0, nu, rel_tol, max_iters, trace=None):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    y = np.array(y0, dtype=np.float64, copy=True)
    dist = distances(pts, y)
    obj = float(dist.sum())
    if trace is not None:
        trace.append(obj)
    if obj == 0.0:
        return y, obj, 0, True
    nu2 = nu * nu
    it = 0
    converged = False
    while it < max_iters:
        anchor = dist <= nu
        eta = int(anchor.sum())
        w = np.where(anchor, 0.0, 1.0 / np.sqrt(dist * dist + nu2))
        wsum = w.sum()
        if wsum == 0.0:
            converged = True
            break
        cand = (w @ pts) / wsum
        if eta:
            r = wsum * np.sqrt(np.sum((cand - y) ** 2))
            if r <= eta:
                converged = True
                break
            cand = (1.0 - eta / r) * cand + (eta / r) * y
        cdist = distances(pts, cand)
        cobj = float(cdist.sum())
        it += 1
        if not cobj <= obj:
            converged = True
            break
        y, dist = cand, cdist
        if trace is not None:
            trace.append(cobj)
        if obj - cobj <= rel_tol * cobj:
            obj = cobj
            converged = True
            break
        obj = cobj
    return y, obj, it, converged
