"""Independent reference computations used only by the tests."""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
from scipy.sparse.csgraph import csgraph_from_dense, dijkstra


def slen_oracle(ms):
    """Side lengths 1, 1/m_1, 1/(m_1 m_2), ... as exact fractions."""
    out = [Fraction(1)]
    for m in ms:
        out.append(out[-1] / m)
    return out


def discrete_log_oracle(r, slens):
    """Scan for j with slens[j+1] <= r < slens[j]."""
    for j in range(len(slens) - 1):
        if slens[j + 1] <= r < slens[j]:
            return j
    raise ValueError("out of range")


def in_open_middle_third(x, lo, side):
    """Open middle-third test with exact rationals."""
    a = lo + Fraction(side, 3) if isinstance(side, int) else lo + side / 3
    b = lo + 2 * side / 3
    return all(a < xi < b for xi in x)


def colorable_pattern(base, schedule, level):
    """Stagewise open-K membership by walking the cell tree with fractions.

    Follows the doubling rules directly: a cell is doubled at stage t when
    t starts a block or when the cell is not a gate; gates are the central
    children of doubled cells and stay gates until the block ends.
    """
    x = tuple(Fraction(v).limit_denominator(10**15) for v in base)
    origin = (Fraction(0),) * 3
    side = Fraction(1)
    gate = False
    out = []
    for t in range(1, level + 1):
        e = schedule.entry(t)
        if e.block_start:
            gate = False
        doubled = not gate
        k_lo = tuple(o + side / 3 for o in origin)
        inside = doubled and all(k_lo[i] < x[i] < k_lo[i] + side / 3 for i in range(3))
        out.append(inside)
        m = e.m
        child = side / m
        digits = tuple(min(int((x[i] - origin[i]) / child), m - 1) for i in range(3))
        if doubled:
            gate = all(d == (m - 1) // 2 for d in digits)
        origin = tuple(origin[i] + digits[i] * child for i in range(3))
        side = child
    return out


def _parents(schedule, bases, level):
    """Parent cell index (units of slen(t-1)) of each base at each stage."""
    out = []
    for t in range(1, level + 1):
        s = float(schedule.slen(t - 1))
        n = round(1 / s)
        out.append(np.minimum(np.floor(np.asarray(bases) / s + 1e-12).astype(np.int64), n - 1))
    return out


def _compatible(words, parents, level):
    """Pairwise 'lie on a common sheet' matrix: at every stage where both
    points are colored in the same K, the colors agree."""
    n = len(words)
    ok = np.ones((n, n), bool)
    for t in range(level):
        w = words[:, t]
        colored = w != 0
        same_cell = np.all(parents[t][:, None, :] == parents[t][None, :, :], axis=2)
        same_prefix = np.all(words[:, None, :t] == words[None, :, :t], axis=2) if t else True
        clash = colored[:, None] & colored[None, :] & same_cell & same_prefix & (w[:, None] != w[None, :])
        ok &= ~clash
    return ok


def chain_distance_oracle(schedule, p, q, mesh=10):
    """Shortest chain over p, q, jump endpoints and a mesh on the boundary of
    every K whose closure holds p or q, by Dijkstra on a dense graph.

    Words at mesh and jump nodes are found by a direct fractional
    membership test; only toy settings with l <= 2 are intended.
    """
    level = p.level
    nodes_b = [np.array(p.base, float), np.array(q.base, float)]
    nodes_w = [tuple(p.word), tuple(q.word)]
    jumps = []
    seen = set()
    t_vals = np.linspace(0.0, 1.0, mesh + 1)
    for pt in (p, q):
        for t in range(1, level + 1):
            s = schedule.slen(t - 1)
            cell = tuple(min(int(Fraction(v).limit_denominator(10**15) / s), round(1 / s) - 1)
                         for v in pt.base)
            lo = np.array([float(c * s + s / 3) for c in cell])
            side = float(s / 3)
            if not np.all((np.asarray(pt.base) >= lo - 1e-12) & (np.asarray(pt.base) <= lo + side + 1e-12)):
                continue
            pat = colorable_pattern(tuple(lo + side / 2), schedule, level)
            if not pat[t - 1]:
                continue  # this cell was not doubled at stage t
            key = (t, cell, tuple(pt.word[: t - 1]))
            if key in seen:
                continue
            seen.add(key)
            prefix = tuple(pt.word[: t - 1])
            center = lo + side / 2
            base_word = []
            for u, flag in enumerate(pat):
                if u < t - 1:
                    base_word.append(prefix[u] if flag else 0)
                else:
                    base_word.append(1 if flag else 0)
            ids = []
            for color in (1, 2):
                w = list(base_word)
                w[t - 1] = color
                nodes_b.append(center)
                nodes_w.append(tuple(w))
                ids.append(len(nodes_b) - 1)
            jumps.append((ids[0], ids[1], float(schedule.jump_cost(t))))
            # boundary mesh: stage t is wild there; other stages follow the prefix
            for axis in range(3):
                for face in (0.0, 1.0):
                    for a, b in itertools.product(t_vals, t_vals):
                        z = np.empty(3)
                        others = [i for i in range(3) if i != axis]
                        z[axis] = face
                        z[others[0]] = a
                        z[others[1]] = b
                        z = lo + side * z
                        zp = colorable_pattern(tuple(z), schedule, level)
                        w = []
                        for u, flag in enumerate(zp):
                            if not flag or u == t - 1:
                                w.append(0)
                            elif u < t - 1:
                                w.append(prefix[u] if prefix[u] else 1)
                            else:
                                w.append(1)
                        variants = [tuple(w)]
                        free = [u for u in range(t, level) if w[u]]
                        for combo in itertools.product((1, 2), repeat=len(free)):
                            v = list(w)
                            for u, c in zip(free, combo):
                                v[u] = c
                            variants.append(tuple(v))
                        for v in set(variants):
                            nodes_b.append(z)
                            nodes_w.append(v)
    B = np.array(nodes_b)
    W = np.array(nodes_w, dtype=np.int8).reshape(len(nodes_b), level)
    P = _parents(schedule, B, level)
    ok = _compatible(W, P, level)
    D = np.linalg.norm(B[:, None, :] - B[None, :, :], axis=2)
    G = np.where(ok, D, np.inf)
    np.fill_diagonal(G, np.inf)
    for a, b, c in jumps:
        G[a, b] = min(G[a, b], c)
        G[b, a] = min(G[b, a], c)
    graph = csgraph_from_dense(G, null_value=np.inf)
    dist = dijkstra(graph, indices=0)
    spacing = float(schedule.slen(0)) / 3 / mesh
    return float(dist[1]), spacing


def psi(x):
    """x -> (|x|_inf / |x|_2) x, the cube-to-ball radial map."""
    x = np.asarray(x, float)
    n2 = np.linalg.norm(x, axis=-1, keepdims=True)
    ninf = np.max(np.abs(x), axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(n2 > 0, ninf / n2 * x, 0.0)
    return out


def ball_volume(r):
    return 4.0 / 3.0 * math.pi * r**3
