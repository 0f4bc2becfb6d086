"""Equivariant truncated meshes for a once-punctured torus with a cusp.

The representation is conjugated so the peripheral curve acts as
z -> z + tau and the maximal embedded horoball at infinity has height 1.
A fundamental strip for the cusp group is then bounded below by the
"floor": the upper envelope of the isometric circles of the non-
peripheral elements.  The strip above the floor, cut at height r, is
meshed as a structured grid:

* floor row: samples of the envelope arcs uniform in hyperbolic arc
  length, so the side-pairing isometries carry floor vertices exactly
  onto floor vertices and short-geodesic valleys get resolved at their
  own scale;
* front zone: offset rows marched along the floor's normals with
  hyperbolic step ~ h, merging nodes as the deep valleys dug by short
  geodesics fill in, until the front flattens at a fixed height;
* cusp zone: uniform rows from there up to y = r; the rows with y >= 2
  are the "rings" used for asymptotic analysis.

Consecutive rows may have different node counts, so each band between
rows is triangulated by a monotone stitching sweep.

Vertices identified by the side pairings or by the seam translation
share a single degree of freedom; faces reference (dof, deck word)
pairs so any equivariant quantity can be evaluated per corner.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateInput,
    DepthTooSmall,
    MeshQualityFailure,
    UnsupportedTopology,
)
from .fuchsian import (
    Representation,
    SurfacePresentation,
    ball_images,
    build_surface,
    evaluate,
    reduce_word,
    word_inverse,
)
from .hyperbolic import Mobius, classify

__all__ = [
    "TruncatedMesh",
    "RingRow",
    "build_mesh",
    "cached_build_mesh",
    "cusp_frame",
    "peripheral_frame",
    "save_mesh",
    "load_mesh",
    "mesh_key",
]

MESH_FORMAT_VERSION = 1


def peripheral_frame(rep: Representation, index: int = 0):
    """Normalizing frame at a parabolic puncture.

    Returns (S, tau, word) such that (S rho S^-1)(word) is z -> z + tau
    with tau > 0; word is the stored peripheral word or its inverse,
    whichever translates in the positive direction.
    """
    word = rep.surface.peripheral_words[index]
    P = evaluate(rep, word)
    cls = classify(P)
    if cls.kind != "Parabolic":
        raise UnsupportedTopology(
            f"puncture {index} is {cls.kind}; the cusp frame needs a parabolic")
    a, b, c, d = P.m.ravel()
    if abs(c) < 1e-12 * max(abs(a), abs(d), 1.0):
        S = Mobius.identity()
    else:
        xf = (a - d) / (2.0 * c)
        S = Mobius(np.array([[0.0, -1.0], [1.0, -xf]]))
    Pn = (S @ P @ S.inv()).m
    if abs(Pn[1, 0]) > 1e-7 * abs(Pn[0, 0]):
        raise DegenerateInput("failed to normalize the peripheral to a translation")
    tau = Pn[0, 1] / Pn[0, 0]
    if tau < 0.0:
        word = word_inverse(word)
        tau = -tau
    if tau == 0.0:
        raise DegenerateInput("peripheral normalizes to the identity")
    return S, float(tau), word


# ---------------------------------------------------------------------------
# floor: isometric-circle envelope


def _nonperipheral_min_c(rep_n: Representation, depth: int):
    """min |c| over the word ball, skipping the translation subgroup."""
    best = np.inf
    for w, T in ball_images(rep_n, depth).items():
        c = abs(T.m[1, 0])
        if c <= 1e-9:
            if abs(abs(T.trace) - 2.0) > 1e-6:
                raise DegenerateInput(
                    f"element {''.join(w)} fixes infinity but is not peripheral")
            continue
        best = min(best, c)
    return best


def cusp_frame(rep: Representation, depth: int = 4):
    """Horoball-normalized chart for the cusp of ``rep``.

    Returns ``(N, tau, word, depth)`` where the Mobius map ``N`` carries
    the representation's coordinates to the chart in which the peripheral
    element acts by ``z -> z + tau`` (``tau > 0``) and the largest
    isometric circle of the conjugated group has radius 1, so the region
    above height 1 is a maximal embedded cusp neighbourhood.  The word
    ball used to certify the radius is grown from ``depth`` until the
    answer stabilizes; the depth actually used is returned.

    The output is a deterministic function of the representation, which
    lets two equal representations normalize to the *same* chart.
    """
    S, tau0, zword = peripheral_frame(rep)
    rho_n = rep.conjugated(S)
    d = depth
    while True:
        m0 = _nonperipheral_min_c(rho_n, d)
        m1 = _nonperipheral_min_c(rho_n, d + 1)
        if np.isfinite(m0) and abs(m0 - m1) <= 1e-9 * m0:
            break
        d += 1
        if d > 8:
            raise DepthTooSmall("horoball normalization did not stabilize by depth 8")
    sigma = m0
    D = Mobius(np.array([[np.sqrt(sigma), 0.0], [0.0, 1.0 / np.sqrt(sigma)]]))
    return D @ S, float(sigma * tau0), zword, d


def _strip_circles(rep_s: Representation, zword: tuple, tau: float, depth: int):
    """Isometric circles with centers folded into [0, tau), deduped.

    Returns a list of (center, radius, word); the word is adjusted by
    peripheral powers so that its isometric circle is the listed one.
    """
    out: dict = {}
    for w, T in sorted(ball_images(rep_s, depth).items(),
                       key=lambda it: (len(it[0]), it[0])):
        c = T.m[1, 0]
        if abs(c) <= 1e-9:
            continue
        center = -T.m[1, 1] / c
        radius = 1.0 / abs(c)
        if radius > 1.0 + 1e-6:
            raise DegenerateInput("isometric circle larger than the horoball bound")
        k = int(np.floor(center / tau))
        if k != 0:
            w = reduce_word(w + zword * k if k > 0 else w + word_inverse(zword) * (-k))
            center -= k * tau
        key = (round(center, 9), round(radius, 9))
        if key not in out:
            out[key] = (center, radius, w)
    return sorted(out.values())


def _sq_height(x, circle):
    cx, r = circle[0], circle[1]
    return r * r - (x - cx) * (x - cx)


def _crossing(c1, c2):
    """x where the two semicircle heights agree (unique: the squared
    heights are parabolas of equal curvature)."""
    x1, r1 = c1[0], c1[1]
    x2, r2 = c2[0], c2[1]
    return (r1 * r1 - r2 * r2 + x2 * x2 - x1 * x1) / (2.0 * (x2 - x1))


def _extended_circles(circles, tau, zword):
    """Circles replicated over enough periods to cover [-tau-1, 2*tau+1]
    with a one-radius safety margin.  A copy shifted by k*tau is the
    isometric circle of the original word post-composed with the k-th
    inverse peripheral power, so shifted copies keep valid words."""
    K = int(np.ceil(2.0 + 2.0 / tau))
    ext = []
    for k in range(-K, K + 1):
        if k == 0:
            ext.extend(circles)
            continue
        shift = word_inverse(zword) * k if k > 0 else zword * (-k)
        for (cx, r, w) in circles:
            ext.append((cx + k * tau, r, reduce_word(w + shift)))
    ext.sort(key=lambda e: (e[0], -e[1]))
    return ext


def _upper_envelope(entries):
    """Upper envelope of semicircles given entries sorted by center.

    Returns (stack, cross): stack[i+1] is the active circle on
    (cross[i], cross[i+1]).  Same-curvature parabolas make this the
    classic increasing-slope line envelope.
    """
    stack: list = []
    cross: list = []
    for c in entries:
        drop = False
        while stack:
            top = stack[-1]
            if abs(c[0] - top[0]) < 1e-12:
                drop = c[1] <= top[1]
                if drop:
                    break
                stack.pop()
                if cross:
                    cross.pop()
                continue
            xc = _crossing(top, c)
            if cross and xc <= cross[-1] + 1e-12:
                stack.pop()
                cross.pop()
                continue
            break
        if drop:
            continue
        if stack:
            cross.append(_crossing(stack[-1], c))
        stack.append(c)
    return stack, cross


def _floor_arcs(circles, tau, zword):
    """One period of envelope arcs starting at the lowest breakpoint.

    Returns (x_seam, arcs) with arcs = [(circle, x_from, x_to), ...]
    covering [x_seam, x_seam + tau] contiguously.
    """
    if not circles:
        raise DepthTooSmall("no isometric circles found for the floor")
    ext = _extended_circles(circles, tau, zword)
    stack, cross = _upper_envelope(ext)
    # crossings within one radius of the window edges compare against an
    # incomplete set of competitors; only the interior of the sweep is real
    lo = ext[0][0] + 1.0
    hi = ext[-1][0] - 1.0
    genuine = [i for i, xc in enumerate(cross) if lo < xc < hi]
    if not genuine:
        raise DepthTooSmall("floor envelope has no interior breakpoints")
    height = {}
    for i in genuine:
        h2 = _sq_height(cross[i], stack[i])
        if h2 <= 1e-12:
            raise MeshQualityFailure(
                f"floor envelope pinches to the real axis near x = {cross[i]:.6g}")
        height[i] = np.sqrt(h2)
    # deterministic seam: lowest breakpoint in the base period, ties by x
    cand = [i for i in genuine if -1e-9 <= cross[i] < tau - 1e-9]
    if not cand:
        raise DepthTooSmall("no envelope breakpoint found in the base period")
    seam_index = min(cand, key=lambda i: (round(height[i], 12), cross[i]))
    x_seam = cross[seam_index]
    arcs = []
    x_cur = x_seam
    i = seam_index
    while x_cur < x_seam + tau - 1e-12:
        circle = stack[i + 1]
        x_next = cross[i + 1] if i + 1 < len(cross) else np.inf
        x_to = min(x_next, x_seam + tau)
        arcs.append((circle, x_cur, x_to))
        x_cur = x_to
        i += 1
    # force exact closure of the period
    last = arcs[-1]
    arcs[-1] = (last[0], last[1], x_seam + tau)
    return x_seam, arcs


# ---------------------------------------------------------------------------
# worded union-find for vertex identifications


class _WordedUF:
    """Union-find where each node carries a deck word to its root:
    pos_i = rho(rel_i)(pos_root)."""

    def __init__(self, n, rep_s, positions):
        self.parent = list(range(n))
        self.rel = [()] * n
        self.rep = rep_s
        self.pos = positions

    def find(self, i):
        if self.parent[i] == i:
            return i, ()
        root, w = self.find(self.parent[i])
        self.rel[i] = reduce_word(self.rel[i] + w)
        self.parent[i] = root
        return root, self.rel[i]

    def union(self, i, j, word):
        """Declare pos_j = rho(word)(pos_i)."""
        ri, wi = self.find(i)
        rj, wj = self.find(j)
        if ri == rj:
            lhs = evaluate(self.rep, wj)
            rhs = evaluate(self.rep, reduce_word(word + wi))
            if not np.allclose(lhs.m, rhs.m, atol=1e-8):
                raise MeshQualityFailure(
                    "inconsistent floor identification cycle")
            return
        self.parent[rj] = ri
        self.rel[rj] = reduce_word(word_inverse(wj) + word + wi)

    def classes(self):
        """(master_index, rel_word) per node; master = min of each class."""
        groups: dict = {}
        for i in range(len(self.parent)):
            root, _ = self.find(i)
            groups.setdefault(root, []).append(i)
        master_of = {}
        for root, members in groups.items():
            m = min(members)
            for i in members:
                master_of[i] = m
        out = []
        for i in range(len(self.parent)):
            m = master_of[i]
            _, wi = self.find(i)
            _, wm = self.find(m)
            out.append((m, reduce_word(wi + word_inverse(wm))))
        return out


# ---------------------------------------------------------------------------
# mesh


def _march_front(row0: np.ndarray, tau: float, h: float, y_flat: float):
    """Offset rows from the floor until the front freezes at y_flat.

    Each step moves every live node along the front's outward normal by
    its local hyperbolic step (h * y, capped at the flat line), smooths
    tangentially, and merges nodes that collide as the valleys over
    short geodesics fill in.  A node reaching y_flat freezes: it keeps
    its vertex id in all later rows, so the band stitcher sees a shared
    vertex there instead of a zero-width sliver.

    Returns (rows_ids, rows_parents, verts): per-row vertex-id arrays
    (row 0 being 0..len(row0)-1, the floor), each node's index in the
    previous row, and the vertex position list.
    """
    verts = list(row0)
    ids = np.arange(row0.size)
    pos = row0.copy()
    frozen = np.zeros(row0.size, dtype=bool)
    rows_ids = [ids]
    rows_parents: list = [None]
    guard = int(20 * (np.log(y_flat / row0.imag.min()) / h + 10))
    snap = 0.3 * h * y_flat
    while not frozen.all():
        if len(rows_ids) > guard:
            raise MeshQualityFailure("front marching failed to reach the flat line")
        east = np.roll(pos, -1)
        east[-1] += tau
        west = np.roll(pos, 1)
        west[0] -= tau
        t = east - west
        that = t / np.abs(t)
        step = np.where(
            frozen, 0.0,
            np.minimum(h * pos.imag, np.maximum(y_flat - pos.imag, 0.0)))
        q = pos + 1j * that * step
        # tangential-only smoothing: equalizes spacing without the
        # shrinkage that would drag the front below the floor in valleys
        for _ in range(2):
            east = np.roll(q, -1)
            east[-1] += tau
            west = np.roll(q, 1)
            west[0] -= tau
            t = east - west
            that = t / np.abs(t)
            disp = 0.5 * (east + west) - q
            move = 0.3 * that * (disp.real * that.real + disp.imag * that.imag)
            q = np.where(frozen, q, q + move)
        yq = np.minimum(q.imag, y_flat)
        newly = ~frozen & (yq >= y_flat - snap)
        yq = np.where(newly, y_flat, yq)
        q = np.where(frozen, pos, q.real + 1j * yq)
        live = frozen | newly
        # merge collisions (valley walls meeting) and any ordering
        # faults; frozen nodes are already referenced by faces below and
        # must survive, so the moving partner is always the one dropped
        # merge collisions (valley walls meeting) until the row is clean:
        # unmerged overlaps would let the walls pass through each other
        keep = np.ones(q.size, dtype=bool)
        while True:
            idx = np.flatnonzero(keep)
            if idx.size < 4:
                raise MeshQualityFailure("front collapsed while merging nodes")
            qq = q[idx]
            fz = live[idx]
            if fz.all():
                # final row: every node is pinned to the flat line and no
                # rule below may drop a frozen node, so the row is final
                break
            east = np.roll(qq, -1)
            east[-1] += tau
            gaps = np.abs(east - qq)
            target = h * 0.5 * (qq.imag + east.imag)
            # merge on true proximity or a genuine fold-over; tiny x
            # inversions are normal wobble on near-vertical valley walls
            bad = np.flatnonzero(
                ((gaps < 0.55 * target) | (east.real - qq.real < -0.25 * target))
                & ~(fz & np.roll(fz, -1)))
            if bad.size == 0:
                # local criteria are clean; enforce a globally embedded,
                # non-pinched front by dropping any loop where the chain
                # crosses itself or two walls graze (a valley closing at
                # the seam can stall forever just above the gap rule)
                pair = _front_pinch(qq, tau, h, fz)
                if pair is None:
                    break
                i, k = pair
                m_cur = idx.size
                side1 = [(i + 1 + t) % m_cur for t in range((k - i) % m_cur)]
                side2 = [(k + 1 + t) % m_cur for t in range((i - k) % m_cur)]
                for side in sorted((side1, side2), key=len):
                    if (side and not any(fz[d] for d in side)
                            and m_cur - len(side) >= 4):
                        for d in side:
                            keep[idx[d]] = False
                        break
                else:
                    raise MeshQualityFailure(
                        "front self-intersection could not be merged away")
                continue
            last = -2
            for j in bad:
                if j <= last + 1:
                    continue
                last = int(j)
                jn = (j + 1) % idx.size
                if fz[j] != fz[jn]:
                    victim = jn if fz[j] else j
                else:
                    # valleys fill bottom-up: absorb the deeper node
                    victim = j if qq[j].imag <= qq[jn].imag else jn
                keep[idx[victim]] = False
        was_frozen = frozen[keep]
        parents = np.flatnonzero(keep)
        p_old = pos
        pos = q[keep]
        old_ids = ids[keep]
        frozen = live[keep]
        ids = np.empty(pos.size, dtype=int)
        for k in range(pos.size):
            if was_frozen[k]:
                ids[k] = old_ids[k]
            else:
                ids[k] = len(verts)
                verts.append(pos[k])
        rows_ids.append(ids)
        rows_parents.append(parents)
    return rows_ids, rows_parents, verts


def _front_pinch(qq, tau: float, h: float, fz):
    """First pair of front edges that cross or graze on the cylinder.

    Edges are the closed chain's segments; copies of partner edges
    shifted by one period catch contacts straddling the seam.  A proper
    crossing wins; otherwise non-adjacent edges closer than a quarter of
    the local cell height count, since a valley mouth can hover just
    above the consecutive-gap rule forever (the ratio is scale
    invariant) while its walls all but touch.  A graze only counts when
    one of the two chain sides between the edges is an actual valley we
    could pinch off: free of frozen nodes, small enough to leave a
    chain, and dipping below the graze by more than the gap itself.
    Without that test a short frozen edge between two longer ones on the
    flat line reads as a graze forever.  Returns the pair (i, k)
    pinching off the fewest nodes, or None if the chain is clean.
    """
    m = qq.size
    P0 = qq
    P1 = np.roll(qq, -1)
    P1[-1] += tau

    def cr(u, v):
        return u.real * v.imag - u.imag * v.real

    def seg_point(P, A, E, L2):
        t = np.clip(((P - A).real * E.real + (P - A).imag * E.imag)
                    / L2, 0.0, 1.0)
        return np.abs(P - A - t * E)

    A = P0[:, None]
    B = P1[:, None]
    dcyc = np.minimum((np.arange(m)[None, :] - np.arange(m)[:, None]) % m,
                      (np.arange(m)[:, None] - np.arange(m)[None, :]) % m)
    ymid = 0.5 * (P0.imag + P1.imag)
    eps = 0.25 * h * 0.5 * (ymid[:, None] + ymid[None, :])
    best_cross = None
    best_touch = None
    for s in (0.0, tau, -tau):
        C = P0[None, :] + s
        D = P1[None, :] + s
        d1 = cr(B - A, C - A)
        d2 = cr(B - A, D - A)
        d3 = cr(D - C, A - C)
        d4 = cr(D - C, B - C)
        for i, k in np.argwhere((d1 * d2 < 0.0) & (d3 * d4 < 0.0)):
            if i == k:
                continue
            key = (min((k - i) % m, (i - k) % m), int(i), int(k))
            if best_cross is None or key < best_cross[0]:
                best_cross = (key, (int(i), int(k)))
        if best_cross is not None:
            continue
        E1 = B - A
        E2 = D - C
        L1 = np.maximum(E1.real ** 2 + E1.imag ** 2, 1e-300)
        L2 = np.maximum(E2.real ** 2 + E2.imag ** 2, 1e-300)
        dist = np.minimum(
            np.minimum(seg_point(C, A, E1, L1), seg_point(D, A, E1, L1)),
            np.minimum(seg_point(A, C, E2, L2), seg_point(B, C, E2, L2)))
        ratio = dist / eps
        ratio[dcyc <= 1] = np.inf
        for i, k in np.argwhere(ratio < 1.0):
            i, k = int(i), int(k)
            has_valley = False
            for span_from, span in ((i, (k - i) % m), (k, (i - k) % m)):
                nodes = [(span_from + 1 + t) % m for t in range(span)]
                if (not nodes or m - len(nodes) < 4
                        or any(fz[d] for d in nodes)):
                    continue
                ywall = min(P0[i].imag, P1[i].imag, P0[k].imag, P1[k].imag)
                if ywall - min(qq[d].imag for d in nodes) > dist[i, k]:
                    has_valley = True
                    break
            if not has_valley:
                continue
            key = (float(ratio[i, k]), i, k)
            if best_touch is None or key < best_touch[0]:
                best_touch = (key, (i, k))
    if best_cross is not None:
        return best_cross[1]
    return None if best_touch is None else best_touch[1]


def _band_emitter(ids_a, ids_b):
    """Collects corner triples, skipping triangles that repeat a vertex
    (rows touching along a frozen run share vertices; those triangles
    have zero area and no surface content)."""
    tris = []

    def emit(corners):
        keys = set()
        for (in_b, idx, k) in corners:
            gid = ids_b[idx] if in_b else ids_a[idx]
            keys.add((int(gid), k))
        if len(keys) == 3:
            tris.append(corners)

    return tris, emit


def _wire_band(A, ids_a, B, ids_b, parents, tau: float):
    """Triangulate the band between a front row and its offset row.

    Every new node j stepped from old node parents[j]; old nodes merged
    away in between form a cell polygon with the new node on their left,
    triangulated by ear clipping (a wiggly valley bottom has ears a
    plain fan cannot express).  Pairing by parentage (not by x) stays
    correct on the near-vertical walls of a deep valley, where x barely
    advances while y sweeps the wall.  Corner triples are
    ((in_b, idx, k), ...) with period shift k: the corner sits at
    row[idx] + k * tau and carries the k-th peripheral word.
    """
    Na, Nb = A.size, B.size
    tris, emit = _band_emitter(ids_a, ids_b)

    def old(i):
        k, idx = divmod(i, Na)
        return idx, k

    def new(j):
        k, idx = divmod(j, Nb)
        return idx, k

    for j in range(Nb):
        p0 = int(parents[j])
        p1 = int(parents[(j + 1) % Nb]) + (Na if j + 1 == Nb else 0)
        ja, ka = new(j)
        jb, kb = new(j + 1)
        # cell polygon, ccw: old arc left to right, then back along the
        # new edge; coincident corners (frozen nodes) are dropped
        corners = [(False,) + old(t) for t in range(p0, p1 + 1)]
        corners.append((True, jb, kb))
        corners.append((True, ja, ka))
        pts = [A[idx] + k * tau for (_, idx, k) in corners[:-2]]
        pts.append(B[jb] + kb * tau)
        pts.append(B[ja] + ka * tau)
        dedup_c = []
        dedup_p = []
        for c, p in zip(corners, pts):
            if dedup_p and abs(p - dedup_p[-1]) < 1e-13:
                continue
            dedup_c.append(c)
            dedup_p.append(p)
        while len(dedup_p) > 1 and abs(dedup_p[0] - dedup_p[-1]) < 1e-13:
            dedup_c.pop()
            dedup_p.pop()
        if len(dedup_p) < 3:
            continue
        cell_tris = _triangulate_cell(dedup_p)
        if cell_tris is None:
            raise MeshQualityFailure(
                "could not triangulate a front band cell")
        for (i0, i1, i2) in cell_tris:
            emit((dedup_c[i0], dedup_c[i1], dedup_c[i2]))
    return tris


def _min_angle(a, b, c) -> float:
    """Smallest interior angle of a triangle, in radians."""
    la, lb, lc = abs(c - b), abs(a - c), abs(b - a)
    if min(la, lb, lc) <= 0.0:
        return -1.0
    worst = np.pi
    for (u, v, w) in ((la, lb, lc), (lb, lc, la), (lc, la, lb)):
        worst = min(worst, np.arccos(np.clip(
            (v * v + w * w - u * u) / (2.0 * v * w), -1.0, 1.0)))
    return float(worst)


def _triangulate_cell(pts):
    """Best triangulation of a simple ccw polygon, as index triples.

    Interval dynamic programming maximizing the minimum triangle angle
    over every triangulation; the valley-bottom cells this serves mix a
    handful of near-collinear swallowed nodes with two offset nodes, and
    a greedy ear order can paint itself into a sliver there.  Cells are
    small, so the cubic DP with quadratic visibility setup is cheap.
    Returns None when the polygon is not simple (no triangulation).
    """
    m = len(pts)

    def cross(u, v):
        return u.real * v.imag - u.imag * v.real

    if m == 3:
        if cross(pts[1] - pts[0], pts[2] - pts[0]) <= 0.0:
            return None
        return [(0, 1, 2)]

    def proper_cross(a, b, c, d):
        d1 = cross(b - a, c - a)
        d2 = cross(b - a, d - a)
        d3 = cross(d - c, a - c)
        d4 = cross(d - c, b - c)
        return d1 * d2 < 0.0 and d3 * d4 < 0.0

    def inside(p):
        # ray cast to +x
        hits = 0
        for t in range(m):
            a, b = pts[t], pts[(t + 1) % m]
            if (a.imag > p.imag) != (b.imag > p.imag):
                x = a.real + (p.imag - a.imag) * (b.real - a.real) \
                    / (b.imag - a.imag)
                if x > p.real:
                    hits += 1
        return hits % 2 == 1

    ok = np.zeros((m, m), dtype=bool)
    for i in range(m):
        ok[i][(i + 1) % m] = True
        ok[(i + 1) % m][i] = True
    for i in range(m):
        for j in range(i + 2, m):
            if i == 0 and j == m - 1:
                continue
            a, b = pts[i], pts[j]
            good = inside(0.5 * (a + b))
            for t in range(m):
                if not good:
                    break
                if t in (i, j) or (t + 1) % m in (i, j):
                    continue
                if proper_cross(a, b, pts[t], pts[(t + 1) % m]):
                    good = False
            ok[i][j] = ok[j][i] = good

    # best[i][j]: max over triangulations of chain i..j (+ diagonal) of
    # the minimum angle; pick[i][j]: the apex achieving it
    best = np.full((m, m), -np.inf)
    pick = np.full((m, m), -1, dtype=int)
    for i in range(m - 1):
        best[i][i + 1] = np.inf
    for span in range(2, m):
        for i in range(0, m - span):
            j = i + span
            for k in range(i + 1, j):
                if not (ok[i][k] and ok[k][j]):
                    continue
                if cross(pts[k] - pts[i], pts[j] - pts[i]) <= 0.0:
                    continue
                q = min(_min_angle(pts[i], pts[k], pts[j]),
                        best[i][k], best[k][j])
                if q > best[i][j]:
                    best[i][j] = q
                    pick[i][j] = k
    if not np.isfinite(best[0][m - 1]) or best[0][m - 1] <= 0.0:
        return None
    out = []
    stack = [(0, m - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        k = int(pick[i][j])
        out.append((i, k, j))
        stack.append((i, k))
        stack.append((k, j))
    return out


def _stitch_rows(A, ids_a, B, ids_b, tau: float):
    """Triangulate the band between two near-flat x-monotone rows.

    A monotone sweep choosing the shorter diagonal at each step; valid
    whenever x-order reflects order along the rows, which holds for the
    flat front row, the uniform resample row, and the cusp-zone rows
    this is used on.  Corner conventions match _wire_band.
    """
    Na, Nb = A.size, B.size
    d = np.abs((B.real - A[0].real + 0.5 * tau) % tau - 0.5 * tau)
    j0 = int(np.argmin(d))
    k0 = int(np.round((A[0].real - B[j0].real) / tau))
    tris, emit = _band_emitter(ids_a, ids_b)

    def node_a(i):
        k, idx = divmod(i, Na)
        return A[idx] + k * tau, idx, k

    def node_b(j):
        k, idx = divmod(j0 + j, Nb)
        return B[idx] + (k + k0) * tau, idx, k + k0

    a = b = 0
    pa, ia, ka = node_a(0)
    pb, ib, kb = node_b(0)
    while a < Na or b < Nb:
        if a < Na:
            pa1, ia1, ka1 = node_a(a + 1)
        if b < Nb:
            pb1, ib1, kb1 = node_b(b + 1)
        take_a = a < Na and (b == Nb or abs(pa1 - pb) <= abs(pb1 - pa))
        if take_a:
            emit(((False, ia, ka), (False, ia1, ka1), (True, ib, kb)))
            a += 1
            pa, ia, ka = pa1, ia1, ka1
        else:
            emit(((False, ia, ka), (True, ib1, kb1), (True, ib, kb)))
            b += 1
            pb, ib, kb = pb1, ib1, kb1
    return tris


@dataclass
class RingRow:
    """One horizontal cusp-zone row: a closed circle on the surface."""

    y: float
    dofs: np.ndarray  # (M,) dof indices, ordered by x
    x: np.ndarray  # (M,) strip x coordinates


@dataclass
class TruncatedMesh:
    """Layered equivariant mesh of the truncated surface.

    Row v lists its vertex ids, in x order, at
    row_vertices[row_offsets[v]:row_offsets[v + 1]]; rows that touch
    along a frozen stretch of the marched front share vertices there.
    Identified vertices (floor pairings) share a dof; `vertex_word[i]`
    maps the master's position onto position i.  Faces reference dofs
    directly together with the total deck word of each corner, so an
    equivariant map w defined on dofs extends to corners as
    rho2(word)(w[dof]).
    """

    source: Representation
    normalizer: Mobius  # strip coords = normalizer(original coords)
    peripheral_word: tuple
    tau: float
    r: float
    resolution: int
    n_cols: int  # uniform columns in the cusp zone
    n_rows: int
    blend_rows: int  # rows below the first ring row
    positions: np.ndarray  # (N,) complex strip positions of grid vertices
    row_vertices: np.ndarray  # concatenated per-row vertex ids
    row_offsets: np.ndarray  # (n_rows + 1,) int
    words: list  # word table; words[0] == ()
    vertex_master: np.ndarray  # (N,) int vertex id
    vertex_word: np.ndarray  # (N,) int index into words
    dof_of: np.ndarray  # (N,) int
    n_dofs: int
    dof_grid: np.ndarray  # (n_dofs,) vertex id of each dof's master
    face_dofs: np.ndarray  # (F, 3) int
    face_words: np.ndarray  # (F, 3) int index into words
    face_pos: np.ndarray  # (F, 3) complex corner positions in the strip
    rings: list = field(default_factory=list)  # RingRow, y from 2 up to r
    floor_info: dict = field(default_factory=dict)

    @property
    def boundary(self) -> RingRow:
        return self.rings[-1]

    @property
    def dof_positions(self) -> np.ndarray:
        return self.positions[self.dof_grid]

    @property
    def strip_representation(self) -> Representation:
        return self.source.conjugated(self.normalizer)

    def row(self, v: int) -> np.ndarray:
        ids = self.row_vertices[self.row_offsets[v]:self.row_offsets[v + 1]]
        return self.positions[ids]


def _quality_check(face_pos, min_angle_deg=5.0):
    p0, p1, p2 = face_pos[:, 0], face_pos[:, 1], face_pos[:, 2]
    e0, e1, e2 = p1 - p0, p2 - p1, p0 - p2
    area2 = e0.real * (-e2.imag) - e0.imag * (-e2.real)
    if np.any(area2 <= 0.0):
        raise MeshQualityFailure("degenerate or inverted face in the mesh")
    angles = []
    for u, v in ((e0, -e2), (e1, -e0), (e2, -e1)):
        cosang = (u.real * v.real + u.imag * v.imag) / (np.abs(u) * np.abs(v))
        angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    worst = np.degrees(np.min(angles))
    if worst < min_angle_deg:
        raise MeshQualityFailure(
            f"minimum face angle {worst:.2f} deg below {min_angle_deg} deg")
    return worst


def build_mesh(rep: Representation, r: float = 8.0, resolution: int = 64,
               depth: int = 4) -> TruncatedMesh:
    """Build the truncated equivariant mesh for a cusped punctured torus.

    r is the truncation height in horoball-normalized coordinates
    (the maximal embedded horoball sits at height 1); resolution sets
    the target number of columns across the cusp width.
    """
    surface = rep.surface
    if (surface.genus, surface.punctures) != (1, 1):
        raise UnsupportedTopology(
            f"meshing implemented for the once-punctured torus only, "
            f"got (g, n) = ({surface.genus}, {surface.punctures})")
    if r <= 3.0:
        raise DegenerateInput("truncation height must exceed the blend zone (r > 3)")
    if resolution < 8:
        raise DegenerateInput("resolution must be at least 8")

    N, tau, zword, d = cusp_frame(rep, depth)
    rho_s = rep.conjugated(N)

    # grow the word depth until the set of envelope arcs stops changing
    while True:
        try:
            circles0 = _strip_circles(rho_s, zword, tau, d)
            circles1 = _strip_circles(rho_s, zword, tau, d + 1)
            x_seam, arcs0 = _floor_arcs(circles0, tau, zword)
            _, arcs1 = _floor_arcs(circles1, tau, zword)
            key0 = {(round(c[0] % tau, 7), round(c[1], 7)) for c, _, _ in arcs0}
            key1 = {(round(c[0] % tau, 7), round(c[1], 7)) for c, _, _ in arcs1}
            if key0 == key1:
                break
            fail = (f"floor envelope not stable at word depth {d} "
                    f"({len(key0)} vs {len(key1)} arcs)")
        except DepthTooSmall as exc:
            fail = str(exc)
        if d >= 8:
            raise DepthTooSmall(fail)
        d += 1

    # ---- floor samples, uniform in hyperbolic arc length along each
    # circle (ds = |dz|/y integrates to log tan(phi/2)), shared breakpoints
    h = tau / resolution
    floor_pts: list[complex] = []
    arc_ranges = []  # (start, stop) inclusive indices into floor_pts per arc
    for (circle, x_from, x_to) in arcs0:
        cx, rad, word = circle
        phi_from = np.arccos(np.clip((x_from - cx) / rad, -1.0, 1.0))
        phi_to = np.arccos(np.clip((x_to - cx) / rad, -1.0, 1.0))
        s_from = np.log(np.tan(0.5 * phi_from))
        s_to = np.log(np.tan(0.5 * phi_to))
        n = max(2, int(np.ceil((s_from - s_to) / h - 1e-9)))
        phis = 2.0 * np.arctan(np.exp(np.linspace(s_from, s_to, n + 1)))
        pts = cx + rad * np.cos(phis) + 1j * rad * np.sin(phis)
        if floor_pts:
            start = len(floor_pts) - 1
            floor_pts[-1] = (floor_pts[-1] + pts[0]) / 2.0
            floor_pts.extend(pts[1:])
        else:
            start = 0
            floor_pts.extend(pts)
        arc_ranges.append((start, len(floor_pts) - 1))
    M = len(floor_pts) - 1
    if abs(floor_pts[-1] - (floor_pts[0] + tau)) > 1e-9:
        raise MeshQualityFailure("floor polyline does not close up over one period")
    floor_pts[-1] = floor_pts[0] + tau

    # ---- arc pairings -> identification edges on floor indices 0..M-1
    uf = _WordedUF(M, rho_s, None)
    pairing_words = []
    for (circle, _, _), (i0, i1) in zip(arcs0, arc_ranges):
        cx, rad, word = circle
        T = evaluate(rho_s, word)
        pts = np.array(floor_pts[i0:i1 + 1])
        imgs = T(pts)
        smid = -int(np.floor((imgs[len(imgs) // 2].real - x_seam) / tau))
        if smid != 0:
            word_total = reduce_word(
                (zword * smid if smid > 0 else word_inverse(zword) * (-smid)) + word)
            imgs = imgs + smid * tau
        else:
            word_total = word
        pairing_words.append(word_total)
        fp = np.array(floor_pts)
        for k, q in enumerate(imgs):
            jm = int(np.argmin(np.abs(fp - q)))
            if abs(fp[jm] - q) > 1e-8:
                raise MeshQualityFailure(
                    f"floor pairing image misses the sample grid by "
                    f"{abs(fp[jm] - q):.2e}")
            i_k = i0 + k
            wk = word_total
            if i_k == M:
                i_k = 0
                wk = reduce_word(wk + zword)
            if jm == M:
                jm = 0
                wk = reduce_word(word_inverse(zword) + wk)
            uf.union(i_k, jm, wk)

    classes = uf.classes()

    # ---- rows: floor, marched front, then uniform cusp rows
    floor_row = np.asarray(floor_pts[:M])
    floor_y = floor_row.imag
    y_flat = 1.5
    rows_ids, rows_parents, verts = _march_front(floor_row, tau, h, y_flat)
    n_front = len(rows_ids)
    M_top = resolution
    xt = x_seam + tau * np.arange(M_top) / M_top
    n_mid = max(2, int(np.ceil(np.log(2.0 / y_flat) / h)))
    ys_mid = y_flat * (2.0 / y_flat) ** (np.arange(1, n_mid + 1) / n_mid)
    ys_mid[-1] = 2.0
    Vt = max(2, int(round((r - 2.0) / h)))
    ys_top = 2.0 + (r - 2.0) * np.arange(1, Vt + 1) / Vt
    ys_top[-1] = r
    for y in np.concatenate([ys_mid, ys_top]):
        rows_ids.append(np.arange(len(verts), len(verts) + M_top))
        verts.extend(xt + 1j * y)
    n_rows = len(rows_ids)
    pos = np.asarray(verts)
    Ngrid = pos.size
    rows_pos = [pos[ids] for ids in rows_ids]
    row_vertices = np.concatenate(rows_ids)
    row_offsets = np.concatenate(
        [[0], np.cumsum([ids.size for ids in rows_ids])]).astype(int)

    # ---- identifications -> dofs
    words: list[tuple] = [()]
    word_index = {(): 0}

    def wid(w: tuple) -> int:
        if w not in word_index:
            word_index[w] = len(words)
            words.append(w)
        return word_index[w]

    vertex_master = np.arange(Ngrid)
    vertex_word = np.zeros(Ngrid, dtype=int)
    for i, (m, w) in enumerate(classes):
        vertex_master[i] = m
        vertex_word[i] = wid(w)
        if m != i:
            T = evaluate(rho_s, w)
            err = abs(T(pos[m]) - pos[i])
            if err > 1e-8:
                raise MeshQualityFailure(
                    f"floor identification word misplaces vertex by {err:.2e}")

    is_master = vertex_master == np.arange(Ngrid)
    dof_of = np.cumsum(is_master) - 1
    dof_of = dof_of[vertex_master]
    n_dofs = int(is_master.sum())
    dof_grid = np.flatnonzero(is_master)

    # ---- faces: stitch each pair of consecutive rows, seam ghosts via
    # peripheral-power words
    wid(zword)
    face_dofs = []
    face_words = []
    face_pos = []

    def corner(v, idx, k):
        g = rows_ids[v][idx]
        shift = () if k == 0 else (zword * k if k > 0 else word_inverse(zword) * (-k))
        total = reduce_word(shift + words[vertex_word[g]])
        return dof_of[vertex_master[g]], wid(total), pos[g] + k * tau

    for v in range(n_rows - 1):
        if v + 1 < n_front:
            tris = _wire_band(rows_pos[v], rows_ids[v],
                              rows_pos[v + 1], rows_ids[v + 1],
                              rows_parents[v + 1], tau)
        else:
            tris = _stitch_rows(rows_pos[v], rows_ids[v],
                                rows_pos[v + 1], rows_ids[v + 1], tau)
        for tri in tris:
            cs = [corner(v + 1 if in_b else v, idx, k) for (in_b, idx, k) in tri]
            face_dofs.append([c[0] for c in cs])
            face_words.append([c[1] for c in cs])
            face_pos.append([c[2] for c in cs])

    face_dofs = np.array(face_dofs, dtype=int)
    face_words = np.array(face_words, dtype=int)
    face_pos = np.array(face_pos, dtype=complex)
    worst_angle = _quality_check(face_pos)

    blend_rows = n_rows - (Vt + 1)  # rows strictly below y = 2
    rings = []
    for v in range(blend_rows, n_rows):
        rings.append(RingRow(y=float(rows_pos[v][0].imag),
                             dofs=dof_of[rows_ids[v]].copy(), x=xt.copy()))

    return TruncatedMesh(
        source=rep,
        normalizer=N,
        peripheral_word=zword,
        tau=float(tau),
        r=float(r),
        resolution=int(resolution),
        n_cols=M_top,
        n_rows=n_rows,
        blend_rows=blend_rows,
        positions=pos,
        row_vertices=row_vertices,
        row_offsets=row_offsets,
        words=words,
        vertex_master=vertex_master,
        vertex_word=vertex_word,
        dof_of=dof_of,
        n_dofs=n_dofs,
        dof_grid=dof_grid,
        face_dofs=face_dofs,
        face_words=face_words,
        face_pos=face_pos,
        rings=rings,
        floor_info={
            "arc_words": ["".join(c[2]) for c, _, _ in arcs0],
            "pairing_words": ["".join(w) for w in pairing_words],
            "x_seam": float(x_seam),
            "min_floor_y": float(floor_y.min()),
            "max_floor_y": float(floor_y.max()),
            "word_depth": d,
            "n_floor": M,
            "front_rows": n_front,
            "worst_angle_deg": float(worst_angle),
        },
    )


# ---------------------------------------------------------------------------
# serialization and cache


def mesh_key(rep: Representation, r: float, resolution: int) -> str:
    payload = {
        "version": MESH_FORMAT_VERSION,
        "genus": rep.surface.genus,
        "punctures": rep.surface.punctures,
        "images": {g: [round(x, 12) for x in rep.images[g].to_list()]
                   for g in rep.surface.generators},
        "r": round(float(r), 12),
        "resolution": int(resolution),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_mesh(mesh: TruncatedMesh, path) -> None:
    meta = {
        "genus": mesh.source.surface.genus,
        "punctures": mesh.source.surface.punctures,
        "images": {g: mesh.source.images[g].to_list()
                   for g in mesh.source.surface.generators},
        "normalizer": mesh.normalizer.to_list(),
        "peripheral_word": list(mesh.peripheral_word),
        "tau": mesh.tau,
        "r": mesh.r,
        "resolution": mesh.resolution,
        "n_cols": mesh.n_cols,
        "n_rows": mesh.n_rows,
        "blend_rows": mesh.blend_rows,
        "n_dofs": mesh.n_dofs,
        "words": [list(w) for w in mesh.words],
        "rings_y": [ring.y for ring in mesh.rings],
        "floor_info": mesh.floor_info,
        "version": MESH_FORMAT_VERSION,
    }
    np.savez_compressed(
        path,
        meta=json.dumps(meta),
        positions=mesh.positions,
        row_vertices=mesh.row_vertices,
        row_offsets=mesh.row_offsets,
        vertex_master=mesh.vertex_master,
        vertex_word=mesh.vertex_word,
        dof_of=mesh.dof_of,
        dof_grid=mesh.dof_grid,
        face_dofs=mesh.face_dofs,
        face_words=mesh.face_words,
        face_pos=mesh.face_pos,
        ring_dofs=np.array([ring.dofs for ring in mesh.rings]),
        ring_x=np.array([ring.x for ring in mesh.rings]),
    )


def load_mesh(path) -> TruncatedMesh:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != MESH_FORMAT_VERSION:
            raise DegenerateInput("mesh file has an unsupported format version")
        surface = build_surface(meta["genus"], meta["punctures"])
        images = {g: Mobius.from_list(v) for g, v in meta["images"].items()}
        rep = Representation(surface, images)
        rings = [
            RingRow(y=float(y), dofs=z["ring_dofs"][i], x=z["ring_x"][i])
            for i, y in enumerate(meta["rings_y"])
        ]
        return TruncatedMesh(
            source=rep,
            normalizer=Mobius.from_list(meta["normalizer"]),
            peripheral_word=tuple(meta["peripheral_word"]),
            tau=meta["tau"],
            r=meta["r"],
            resolution=meta["resolution"],
            n_cols=meta["n_cols"],
            n_rows=meta["n_rows"],
            blend_rows=meta["blend_rows"],
            positions=z["positions"],
            row_vertices=z["row_vertices"],
            row_offsets=z["row_offsets"],
            words=[tuple(w) for w in meta["words"]],
            vertex_master=z["vertex_master"],
            vertex_word=z["vertex_word"],
            dof_of=z["dof_of"],
            n_dofs=meta["n_dofs"],
            dof_grid=z["dof_grid"],
            face_dofs=z["face_dofs"],
            face_words=z["face_words"],
            face_pos=z["face_pos"],
            rings=rings,
            floor_info=meta["floor_info"],
        )


def cache_dir() -> Path:
    root = os.environ.get("ADSMAX_CACHE_DIR")
    if root:
        return Path(root)
    return Path.home() / ".cache" / "adsmax"


def cached_build_mesh(rep: Representation, r: float = 8.0, resolution: int = 64,
                      depth: int = 4) -> TruncatedMesh:
    """build_mesh with a content-addressed on-disk cache."""
    key = mesh_key(rep, r, resolution)
    path = cache_dir() / f"mesh-{key}.npz"
    if path.exists():
        try:
            return load_mesh(path)
        except Exception:
            path.unlink(missing_ok=True)
    mesh = build_mesh(rep, r=r, resolution=resolution, depth=depth)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    save_mesh(mesh, tmp)
    os.replace(tmp, path)
    return mesh
