"""Slow, independent re-implementations used as test oracles.

Nothing here imports the fast code paths it checks.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np


def dbscan_bruteforce(points, eps, min_pts):
    """Textbook sequential DBSCAN over a full distance matrix, scanning in index order."""
    pts = np.asarray(points, float)
    n = len(pts)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    nbrs = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = [len(nb) >= min_pts for nb in nbrs]
    labels = [-1] * n
    cluster = -1
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        cluster += 1
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in nbrs[p]:
                if labels[q] == -1:
                    labels[q] = cluster
                    queue.append(q)
    return np.array(labels, dtype=np.int64)


# outward label ids: +X, -X, +Y, -Y, +Z, -Z
def _label(axis, sign):
    return 2 * axis + (0 if sign > 0 else 1)


def naive_scores(cuts, points, labels, band=0.05, margin=0.02):
    """Score every cell by looping over cells, their six faces and all points."""
    cuts = [list(map(float, c)) for c in cuts]
    shape = tuple(len(c) - 1 for c in cuts)
    out = np.zeros(shape)
    pts = [tuple(map(float, p)) for p in np.asarray(points, float)]
    labs = [int(x) for x in labels]
    for cell in np.ndindex(*shape):
        lo = [cuts[a][cell[a]] for a in range(3)]
        hi = [cuts[a][cell[a] + 1] for a in range(3)]
        total = 0.0
        # -X, +X, -Y, +Y, -Z, +Z
        for axis in range(3):
            for sign in (-1, 1):
                plane = lo[axis] if sign < 0 else hi[axis]
                u, v = [a for a in range(3) if a != axis]
                mu = min(margin, 0.25 * (hi[u] - lo[u]))
                mv = min(margin, 0.25 * (hi[v] - lo[v]))
                ulo, uhi = lo[u] + mu, hi[u] - mu
                vlo, vhi = lo[v] + mv, hi[v] - mv
                counts = [0] * 6
                us, vs = [], []
                for p, lab in zip(pts, labs):
                    if abs(p[axis] - plane) <= band and ulo <= p[u] <= uhi and vlo <= p[v] <= vhi:
                        counts[lab] += 1
                        us.append(p[u])
                        vs.append(p[v])
                if not us:
                    continue
                sgn = 1.0 if counts[_label(axis, sign)] == max(counts) else -1.0
                w = (max(us) - min(us)) * (max(vs) - min(vs)) / ((uhi - ulo) * (vhi - vlo))
                w = min(1.0, max(0.0, w))
                total += sgn * w
        out[cell] = total
    return out


def chamfer_bruteforce(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    d_ab = [min(math.dist(p, q) for q in b) for p in a]
    d_ba = [min(math.dist(q, p) for p in a) for q in b]
    return 0.5 * (sum(d_ab) / len(d_ab) + sum(d_ba) / len(d_ba))


def knn_union_bruteforce(centroids, k):
    c = np.asarray(centroids, float)
    n = len(c)
    edges = set()
    for i in range(n):
        d = [(float(np.sum((c[i] - c[j]) ** 2)), j) for j in range(n) if j != i]
        d.sort()
        for _, j in d[:k]:
            edges.add((min(i, j), max(i, j)))
    return sorted(edges)
