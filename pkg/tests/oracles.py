"""Slow, loop-based reference implementations used as test oracles."""

from __future__ import annotations

import math

import numpy as np


def supervision(T, parts, beta, variant="batch"):
    n, c, h, w = T.shape
    rows = h // parts
    out = np.zeros((c, parts))
    for ch in range(c):
        counts = [0] * parts
        for i in range(n):
            best, best_row = -math.inf, 0
            for r in range(h):
                for col in range(w):
                    if T[i, ch, r, col] > best:
                        best, best_row = T[i, ch, r, col], r
            counts[best_row // rows] += 1
        peak = max(counts)
        if variant != "no_filtration" and peak < math.floor(beta * n):
            continue
        if peak == 0:
            continue
        if variant == "one_hot":
            out[ch, counts.index(peak)] = 1.0
        else:
            out[ch] = [v / peak for v in counts]
    return out


def profile(F):
    n, u, h, w = F.shape
    z = [sum(F[i, c, r, x] for i in range(n) for c in range(u) for x in range(w)) / (n * u * w) for r in range(h)]
    total = sum(abs(v) for v in z)
    if total == 0:
        return np.full(h, 1.0 / h)
    return np.array(z) / (total + 1e-12)


def part_target(k, parts, h, gamma):
    rows = h // parts
    off = (parts - gamma * h) / (h * (parts - 1))
    return np.array([gamma if k * rows <= r < (k + 1) * rows else off for r in range(h)])


def kl(target, pred, eps=1e-12):
    return sum(t * (math.log(t) - math.log(p + eps)) for t, p in zip(target, pred) if t > 0)


def triplet(h, labels, alpha):
    n = len(h)
    unit = [row / (np.sqrt(sum(v * v for v in row)) + 1e-12) for row in h]
    d = [[1.0 - float(sum(a * b for a, b in zip(unit[i], unit[j]))) for j in range(n)] for i in range(n)]
    hinges = []
    for i in range(n):
        pos = max(d[i][j] for j in range(n) if labels[j] == labels[i])
        neg = min(d[i][j] for j in range(n) if labels[j] != labels[i])
        hinges.append(max(0.0, pos - neg + alpha))
    active = [x for x in hinges if x > 0]
    return sum(active) / len(active) if active else 0.0


def retrieval(q, q_ids, q_cams, g, g_ids, g_cams):
    """(rank1, mAP, cmc, skipped) by explicit sorting with index tie-break."""
    cmc = np.zeros(len(g))
    aps, skipped = [], 0
    for i in range(len(q)):
        sims = []
        for j in range(len(g)):
            cos = float(np.dot(q[i], g[j]) / (np.linalg.norm(q[i]) * np.linalg.norm(g[j])))
            sims.append((-cos, j))
        ranked = [j for _, j in sorted(sims)]
        ranked = [j for j in ranked if not (g_ids[j] == q_ids[i] and g_cams[j] == q_cams[i])]
        hits = [pos for pos, j in enumerate(ranked, 1) if g_ids[j] == q_ids[i]]
        if not hits:
            skipped += 1
            continue
        cmc[hits[0] - 1 :] += 1
        aps.append(sum((m + 1) / pos for m, pos in enumerate(hits)) / len(hits))
    if not aps:
        return 0.0, 0.0, np.zeros(len(g)), skipped
    cmc /= len(aps)
    return cmc[0], sum(aps) / len(aps), cmc, skipped


def holistic_profile(maps):
    h = maps[0].shape[2]
    z = [0.0] * h
    for F in maps:
        n, u, _, w = F.shape
        for r in range(h):
            z[r] += sum(F[i, c, r, x] for i in range(n) for c in range(u) for x in range(w)) / (n * u * w)
    z = [v / len(maps) for v in z]
    total = sum(abs(v) for v in z)
    return np.array(z) / (total + 1e-12)
