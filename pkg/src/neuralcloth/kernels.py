"""Hot numeric kernels: per-element energies, dihedral angles, skinning and
point-to-triangle queries.

Every kernel exists twice: a numba loop (``*_nb``) and a vectorized numpy
version (``*_np``). The public names dispatch on ``_jit.USE_NUMBA``; the
``IMPLEMENTATIONS`` table exposes both paths for benchmarks and
cross-checks. Gradient accumulation visits elements in index order in both
paths, so results are reproducible run to run.
"""

import math

import numpy as np

from ._jit import USE_NUMBA, njit

# corners of a triangle closest-point feature code: 0..2 vertex, 3..5 edge
# (01, 12, 20), 6 face interior
FEATURE_FACE = 6

BRANCH_CUT_MARGIN = 1e-3
DEGENERATE_AREA = 1e-12


def _scatter_add(n, idx, vals):
    """Sum rows of ``vals`` (M, 3) into an (n, 3) array at ``idx``."""
    out = np.empty((n, 3))
    for c in range(3):
        out[:, c] = np.bincount(idx, weights=vals[:, c], minlength=n)
    return out


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


# ---------------------------------------------------------------------------
# mass-spring
# ---------------------------------------------------------------------------


@njit
def mass_spring_nb(x, edges, rest, k):
    g = np.zeros_like(x)
    energy = 0.0
    for e in range(edges.shape[0]):
        i = edges[e, 0]
        j = edges[e, 1]
        d0 = x[i, 0] - x[j, 0]
        d1 = x[i, 1] - x[j, 1]
        d2 = x[i, 2] - x[j, 2]
        length = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        s = length - rest[e]
        energy += 0.5 * k * s * s
        if length > 0.0:
            c = k * s / length
            g[i, 0] += c * d0
            g[i, 1] += c * d1
            g[i, 2] += c * d2
            g[j, 0] -= c * d0
            g[j, 1] -= c * d1
            g[j, 2] -= c * d2
    return energy, g


def mass_spring_np(x, edges, rest, k):
    i, j = edges[:, 0], edges[:, 1]
    d = x[i] - x[j]
    length = np.linalg.norm(d, axis=1)
    s = length - rest
    energy = 0.5 * k * float(np.sum(s * s))
    c = np.where(length > 0.0, k * s / np.where(length > 0.0, length, 1.0), 0.0)
    f = c[:, None] * d
    n = x.shape[0]
    return energy, _scatter_add(n, i, f) - _scatter_add(n, j, f)


# ---------------------------------------------------------------------------
# continuum membranes: squared Baraff-Witkin and StVK
# ---------------------------------------------------------------------------


@njit
def baraff_witkin_nb(x, faces, dm_inv, area, k_stretch, k_shear):
    g = np.zeros_like(x)
    energy = 0.0
    for f in range(faces.shape[0]):
        a = faces[f, 0]
        b = faces[f, 1]
        c = faces[f, 2]
        m00 = dm_inv[f, 0, 0]
        m01 = dm_inv[f, 0, 1]
        m10 = dm_inv[f, 1, 0]
        m11 = dm_inv[f, 1, 1]
        wu = np.empty(3)
        wv = np.empty(3)
        for r in range(3):
            e1 = x[b, r] - x[a, r]
            e2 = x[c, r] - x[a, r]
            wu[r] = e1 * m00 + e2 * m10
            wv[r] = e1 * m01 + e2 * m11
        lu = math.sqrt(wu[0] * wu[0] + wu[1] * wu[1] + wu[2] * wu[2])
        lv = math.sqrt(wv[0] * wv[0] + wv[1] * wv[1] + wv[2] * wv[2])
        cuv = wu[0] * wv[0] + wu[1] * wv[1] + wu[2] * wv[2]
        ar = area[f]
        energy += ar * (0.5 * k_stretch * ((lu - 1.0) ** 2 + (lv - 1.0) ** 2) + 0.5 * k_shear * cuv * cuv)
        su = ar * k_stretch * (lu - 1.0) / lu if lu > 0.0 else 0.0
        sv = ar * k_stretch * (lv - 1.0) / lv if lv > 0.0 else 0.0
        sh = ar * k_shear * cuv
        for r in range(3):
            pu = su * wu[r] + sh * wv[r]
            pv = sv * wv[r] + sh * wu[r]
            gb = pu * m00 + pv * m01
            gc = pu * m10 + pv * m11
            g[b, r] += gb
            g[c, r] += gc
            g[a, r] -= gb + gc
    return energy, g


def _deformation_gradient(x, faces, dm_inv):
    ds = np.stack([x[faces[:, 1]] - x[faces[:, 0]], x[faces[:, 2]] - x[faces[:, 0]]], axis=2)
    return ds @ dm_inv


def _scatter_faces(n, faces, dds):
    gb = dds[:, :, 0]
    gc = dds[:, :, 1]
    return _scatter_add(n, faces[:, 1], gb) + _scatter_add(n, faces[:, 2], gc) - _scatter_add(n, faces[:, 0], gb + gc)


def baraff_witkin_np(x, faces, dm_inv, area, k_stretch, k_shear):
    F = _deformation_gradient(x, faces, dm_inv)
    wu, wv = F[:, :, 0], F[:, :, 1]
    lu = np.linalg.norm(wu, axis=1)
    lv = np.linalg.norm(wv, axis=1)
    cuv = np.sum(wu * wv, axis=1)
    energy = float(np.sum(area * (0.5 * k_stretch * ((lu - 1.0) ** 2 + (lv - 1.0) ** 2) + 0.5 * k_shear * cuv**2)))
    su = np.where(lu > 0, area * k_stretch * (lu - 1.0) / np.where(lu > 0, lu, 1.0), 0.0)
    sv = np.where(lv > 0, area * k_stretch * (lv - 1.0) / np.where(lv > 0, lv, 1.0), 0.0)
    sh = area * k_shear * cuv
    P = np.stack([su[:, None] * wu + sh[:, None] * wv, sv[:, None] * wv + sh[:, None] * wu], axis=2)
    dds = P @ np.transpose(dm_inv, (0, 2, 1))
    return energy, _scatter_faces(x.shape[0], faces, dds)


@njit
def stvk_nb(x, faces, dm_inv, area, mu, lam):
    g = np.zeros_like(x)
    energy = 0.0
    F = np.empty((3, 2))
    for f in range(faces.shape[0]):
        a = faces[f, 0]
        b = faces[f, 1]
        c = faces[f, 2]
        for r in range(3):
            e1 = x[b, r] - x[a, r]
            e2 = x[c, r] - x[a, r]
            F[r, 0] = e1 * dm_inv[f, 0, 0] + e2 * dm_inv[f, 1, 0]
            F[r, 1] = e1 * dm_inv[f, 0, 1] + e2 * dm_inv[f, 1, 1]
        c00 = F[0, 0] * F[0, 0] + F[1, 0] * F[1, 0] + F[2, 0] * F[2, 0]
        c11 = F[0, 1] * F[0, 1] + F[1, 1] * F[1, 1] + F[2, 1] * F[2, 1]
        c01 = F[0, 0] * F[0, 1] + F[1, 0] * F[1, 1] + F[2, 0] * F[2, 1]
        g00 = 0.5 * (c00 - 1.0)
        g11 = 0.5 * (c11 - 1.0)
        g01 = 0.5 * c01
        tr = g00 + g11
        ar = area[f]
        energy += ar * (mu * (g00 * g00 + g11 * g11 + 2.0 * g01 * g01) + 0.5 * lam * tr * tr)
        s00 = ar * (2.0 * mu * g00 + lam * tr)
        s11 = ar * (2.0 * mu * g11 + lam * tr)
        s01 = ar * 2.0 * mu * g01
        for r in range(3):
            p0 = F[r, 0] * s00 + F[r, 1] * s01
            p1 = F[r, 0] * s01 + F[r, 1] * s11
            gb = p0 * dm_inv[f, 0, 0] + p1 * dm_inv[f, 0, 1]
            gc = p0 * dm_inv[f, 1, 0] + p1 * dm_inv[f, 1, 1]
            g[b, r] += gb
            g[c, r] += gc
            g[a, r] -= gb + gc
    return energy, g


def stvk_np(x, faces, dm_inv, area, mu, lam):
    F = _deformation_gradient(x, faces, dm_inv)
    C = np.transpose(F, (0, 2, 1)) @ F
    G = 0.5 * (C - np.eye(2))
    tr = G[:, 0, 0] + G[:, 1, 1]
    energy = float(np.sum(area * (mu * np.sum(G * G, axis=(1, 2)) + 0.5 * lam * tr * tr)))
    S = area[:, None, None] * (2.0 * mu * G + lam * tr[:, None, None] * np.eye(2))
    dds = (F @ S) @ np.transpose(dm_inv, (0, 2, 1))
    return energy, _scatter_faces(x.shape[0], faces, dds)


# ---------------------------------------------------------------------------
# dihedral angles and bending
# ---------------------------------------------------------------------------
#
# A dihedral is stored as vertex quadruple (i, j, k, l): edge i->j in the
# winding of the first incident face, k opposite in that face, l opposite in
# the second face. nA = e x (xk - xi), nB = (xl - xi) x e with e = xj - xi;
# the signed angle is atan2((nA x nB) . e/|e|, nA . nB), zero when flat.


@njit
def _cross(a0, a1, a2, b0, b1, b2):
    return a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0


@njit
def dihedral_angles_nb(x, quads):
    out = np.zeros(quads.shape[0])
    for q in range(quads.shape[0]):
        i = quads[q, 0]
        j = quads[q, 1]
        k = quads[q, 2]
        m = quads[q, 3]
        e0 = x[j, 0] - x[i, 0]
        e1 = x[j, 1] - x[i, 1]
        e2 = x[j, 2] - x[i, 2]
        na = _cross(e0, e1, e2, x[k, 0] - x[i, 0], x[k, 1] - x[i, 1], x[k, 2] - x[i, 2])
        nb = _cross(x[m, 0] - x[i, 0], x[m, 1] - x[i, 1], x[m, 2] - x[i, 2], e0, e1, e2)
        le = math.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
        if le == 0.0:
            continue
        cr = _cross(na[0], na[1], na[2], nb[0], nb[1], nb[2])
        s = (cr[0] * e0 + cr[1] * e1 + cr[2] * e2) / le
        c = na[0] * nb[0] + na[1] * nb[1] + na[2] * nb[2]
        out[q] = math.atan2(s, c)
    return out


def _dihedral_parts(x, quads):
    xi, xj, xk, xl = (x[quads[:, c]] for c in range(4))
    e = xj - xi
    na = np.cross(e, xk - xi)
    nb = np.cross(xl - xi, e)
    le = np.linalg.norm(e, axis=1)
    return xi, xj, xk, xl, e, na, nb, le


def dihedral_angles_np(x, quads):
    _, _, _, _, e, na, nb, le = _dihedral_parts(x, quads)
    s = np.sum(np.cross(na, nb) * e, axis=1) / np.where(le > 0, le, 1.0)
    c = np.sum(na * nb, axis=1)
    return np.where(le > 0, np.arctan2(s, c), 0.0)


@njit
def bending_nb(x, quads, rest_angle, scale, k_b):
    g = np.zeros_like(x)
    energy = 0.0
    skipped = 0
    tiny = (2.0 * DEGENERATE_AREA) ** 2
    for q in range(quads.shape[0]):
        i = quads[q, 0]
        j = quads[q, 1]
        k = quads[q, 2]
        m = quads[q, 3]
        e0 = x[j, 0] - x[i, 0]
        e1 = x[j, 1] - x[i, 1]
        e2 = x[j, 2] - x[i, 2]
        na = _cross(e0, e1, e2, x[k, 0] - x[i, 0], x[k, 1] - x[i, 1], x[k, 2] - x[i, 2])
        nb = _cross(x[m, 0] - x[i, 0], x[m, 1] - x[i, 1], x[m, 2] - x[i, 2], e0, e1, e2)
        na2 = na[0] * na[0] + na[1] * na[1] + na[2] * na[2]
        nb2 = nb[0] * nb[0] + nb[1] * nb[1] + nb[2] * nb[2]
        le = math.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
        if na2 < tiny or nb2 < tiny or le == 0.0:
            skipped += 1
            continue
        cr = _cross(na[0], na[1], na[2], nb[0], nb[1], nb[2])
        s = (cr[0] * e0 + cr[1] * e1 + cr[2] * e2) / le
        c = na[0] * nb[0] + na[1] * nb[1] + na[2] * nb[2]
        diff = math.atan2(s, c) - rest_angle[q]
        diff = math.pi - ((math.pi - diff) % (2.0 * math.pi))
        w = k_b * scale[q]
        energy += w * diff * diff
        if abs(diff) > math.pi - BRANCH_CUT_MARGIN:
            continue
        coef = 2.0 * w * diff
        # projections of the opposite vertices on the edge, in units of |e|
        pkj = ((x[k, 0] - x[j, 0]) * e0 + (x[k, 1] - x[j, 1]) * e1 + (x[k, 2] - x[j, 2]) * e2) / le
        plj = ((x[m, 0] - x[j, 0]) * e0 + (x[m, 1] - x[j, 1]) * e1 + (x[m, 2] - x[j, 2]) * e2) / le
        pki = ((x[k, 0] - x[i, 0]) * e0 + (x[k, 1] - x[i, 1]) * e1 + (x[k, 2] - x[i, 2]) * e2) / le
        pli = ((x[m, 0] - x[i, 0]) * e0 + (x[m, 1] - x[i, 1]) * e1 + (x[m, 2] - x[i, 2]) * e2) / le
        for r in range(3):
            ua = na[r] / na2
            ub = nb[r] / nb2
            g[k, r] -= coef * le * ua
            g[m, r] -= coef * le * ub
            g[i, r] -= coef * (pkj * ua + plj * ub)
            g[j, r] += coef * (pki * ua + pli * ub)
    return energy, g, skipped


def bending_np(x, quads, rest_angle, scale, k_b):
    xi, xj, xk, xl, e, na, nb, le = _dihedral_parts(x, quads)
    na2 = np.sum(na * na, axis=1)
    nb2 = np.sum(nb * nb, axis=1)
    tiny = (2.0 * DEGENERATE_AREA) ** 2
    ok = (na2 >= tiny) & (nb2 >= tiny) & (le > 0)
    skipped = int(np.count_nonzero(~ok))
    le_s = np.where(ok, le, 1.0)
    s = np.sum(np.cross(na, nb) * e, axis=1) / le_s
    c = np.sum(na * nb, axis=1)
    diff = wrap_angle(np.arctan2(s, c) - rest_angle)
    w = np.where(ok, k_b * scale, 0.0)
    energy = float(np.sum(w * diff * diff))
    coef = np.where(np.abs(diff) > np.pi - BRANCH_CUT_MARGIN, 0.0, 2.0 * w * diff)
    ua = na / np.where(ok, na2, 1.0)[:, None]
    ub = nb / np.where(ok, nb2, 1.0)[:, None]
    pkj = np.sum((xk - xj) * e, axis=1) / le_s
    plj = np.sum((xl - xj) * e, axis=1) / le_s
    pki = np.sum((xk - xi) * e, axis=1) / le_s
    pli = np.sum((xl - xi) * e, axis=1) / le_s
    cc = coef[:, None]
    n = x.shape[0]
    g = _scatter_add(n, quads[:, 2], -cc * le_s[:, None] * ua)
    g += _scatter_add(n, quads[:, 3], -cc * le_s[:, None] * ub)
    g += _scatter_add(n, quads[:, 0], -cc * (pkj[:, None] * ua + plj[:, None] * ub))
    g += _scatter_add(n, quads[:, 1], cc * (pki[:, None] * ua + pli[:, None] * ub))
    return energy, g, skipped


# ---------------------------------------------------------------------------
# linear blend skinning
# ---------------------------------------------------------------------------


@njit
def skin_nb(x, weights, mats):
    n = x.shape[0]
    out = np.zeros((n, 3))
    for v in range(n):
        for jt in range(weights.shape[1]):
            w = weights[v, jt]
            if w == 0.0:
                continue
            for r in range(3):
                out[v, r] += w * (
                    mats[jt, r, 0] * x[v, 0] + mats[jt, r, 1] * x[v, 1] + mats[jt, r, 2] * x[v, 2] + mats[jt, r, 3]
                )
    return out


def skin_np(x, weights, mats):
    lin = np.einsum("nk,kij->nij", weights, mats[:, :3, :3])
    trans = weights @ mats[:, :3, 3]
    return np.einsum("nij,nj->ni", lin, x) + trans


# ---------------------------------------------------------------------------
# closest point on a triangle soup
# ---------------------------------------------------------------------------


@njit
def closest_on_triangle(px, py, pz, verts, i0, i1, i2):
    """Closest point on triangle (i0, i1, i2) to p and its feature code
    (Ericson's region test, scalar arithmetic to avoid temporaries)."""
    ax, ay, az = verts[i0, 0], verts[i0, 1], verts[i0, 2]
    bx, by, bz = verts[i1, 0], verts[i1, 1], verts[i1, 2]
    cx, cy, cz = verts[i2, 0], verts[i2, 1], verts[i2, 2]
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az, 0
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz, 1
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz, 3
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz, 2
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz, 5
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz), 4
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w, FEATURE_FACE


@njit
def build_bvh_nb(verts, faces, leaf_size):
    """Median-split AABB tree. Returns node boxes, child/leaf tables and the
    permuted triangle order."""
    nt = faces.shape[0]
    cent = np.empty((nt, 3))
    tmin = np.empty((nt, 3))
    tmax = np.empty((nt, 3))
    for t in range(nt):
        for r in range(3):
            a = verts[faces[t, 0], r]
            b = verts[faces[t, 1], r]
            c = verts[faces[t, 2], r]
            tmin[t, r] = min(a, b, c)
            tmax[t, r] = max(a, b, c)
            cent[t, r] = (a + b + c) / 3.0
    order = np.arange(nt)
    max_nodes = 2 * nt + 1
    bmin = np.empty((max_nodes, 3))
    bmax = np.empty((max_nodes, 3))
    left = -np.ones(max_nodes, dtype=np.int64)
    right = -np.ones(max_nodes, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)
    stack = np.empty(max_nodes, dtype=np.int64)
    n_nodes = 1
    start[0] = 0
    count[0] = nt
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s0 = start[node]
        cnt = count[node]
        for r in range(3):
            lo = np.inf
            hi = -np.inf
            for q in range(s0, s0 + cnt):
                t = order[q]
                lo = min(lo, tmin[t, r])
                hi = max(hi, tmax[t, r])
            bmin[node, r] = lo
            bmax[node, r] = hi
        if cnt <= leaf_size:
            continue
        axis = 0
        ext = bmax[node, 0] - bmin[node, 0]
        for r in range(1, 3):
            if bmax[node, r] - bmin[node, r] > ext:
                ext = bmax[node, r] - bmin[node, r]
                axis = r
        sub = order[s0 : s0 + cnt].copy()
        keys = np.empty(cnt)
        for q in range(cnt):
            keys[q] = cent[sub[q], axis]
        srt = np.argsort(keys, kind="mergesort")
        for q in range(cnt):
            order[s0 + q] = sub[srt[q]]
        half = cnt // 2
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        start[lc] = s0
        count[lc] = half
        start[rc] = s0 + half
        count[rc] = cnt - half
        stack[sp] = lc
        stack[sp + 1] = rc
        sp += 2
    return bmin[:n_nodes], bmax[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes], order


@njit
def _box_dist2(px, py, pz, lo, hi, node):
    d = 0.0
    for r, v in ((0, px), (1, py), (2, pz)):
        if v < lo[node, r]:
            d += (lo[node, r] - v) ** 2
        elif v > hi[node, r]:
            d += (v - hi[node, r]) ** 2
    return d


@njit
def query_bvh_nb(points, verts, faces, bmin, bmax, left, right, start, count, order):
    npt = points.shape[0]
    closest = np.empty((npt, 3))
    tri = np.empty(npt, dtype=np.int64)
    feat = np.empty(npt, dtype=np.int64)
    dist2 = np.empty(npt)
    stack = np.empty(128, dtype=np.int64)
    for pi in range(npt):
        px, py, pz = points[pi, 0], points[pi, 1], points[pi, 2]
        best = np.inf
        best_t = -1
        best_f = -1
        bx = by = bz = 0.0
        sp = 1
        stack[0] = 0
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_dist2(px, py, pz, bmin, bmax, node) >= best:
                continue
            if left[node] < 0:
                for q in range(start[node], start[node] + count[node]):
                    t = order[q]
                    cx, cy, cz, f = closest_on_triangle(px, py, pz, verts, faces[t, 0], faces[t, 1], faces[t, 2])
                    d = (px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2
                    if d < best or (d == best and t < best_t):
                        best = d
                        best_t = t
                        best_f = f
                        bx, by, bz = cx, cy, cz
            else:
                # descend into the nearer child last so it is popped first
                dl = _box_dist2(px, py, pz, bmin, bmax, left[node])
                dr = _box_dist2(px, py, pz, bmin, bmax, right[node])
                if dl < dr:
                    stack[sp] = right[node]
                    stack[sp + 1] = left[node]
                else:
                    stack[sp] = left[node]
                    stack[sp + 1] = right[node]
                sp += 2
        closest[pi, 0] = bx
        closest[pi, 1] = by
        closest[pi, 2] = bz
        tri[pi] = best_t
        feat[pi] = best_f
        dist2[pi] = best
    return closest, tri, feat, dist2


def _segment_closest(p, a, b):
    ab = b - a
    denom = np.sum(ab * ab, axis=-1)
    t = np.sum((p - a) * ab, axis=-1) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    return a + t[..., None] * ab, t


def _closest_pairs(p, a, b, c):
    """Closest point on triangle (a, b, c) to p, broadcasting over leading axes.

    Candidates are the plane projection (when it falls inside the triangle)
    and the clamped closest points on the three edges; the nearest wins.
    Returns (closest, feature code, squared distance).
    """
    n = np.cross(b - a, c - a)
    n2 = np.sum(n * n, axis=-1)
    cands = []
    codes = []
    for (u, v), code_edge, codes_end in (((a, b), 3, (0, 1)), ((b, c), 4, (1, 2)), ((c, a), 5, (2, 0))):
        q, t = _segment_closest(p, u, v)
        code = np.where(t <= 0.0, codes_end[0], np.where(t >= 1.0, codes_end[1], code_edge))
        cands.append(np.broadcast_to(q, np.broadcast_shapes(q.shape, p.shape)))
        codes.append(code)
    proj = p - (np.sum((p - a) * n, axis=-1) / np.where(n2 > 0, n2, 1.0))[..., None] * n
    w_a = np.sum(np.cross(c - b, proj - b) * n, axis=-1)
    w_b = np.sum(np.cross(a - c, proj - c) * n, axis=-1)
    w_c = np.sum(np.cross(b - a, proj - a) * n, axis=-1)
    inside = (w_a > 0) & (w_b > 0) & (w_c > 0) & (n2 > 0)
    cand = np.stack(cands + [proj], axis=0)
    code = np.stack(codes + [np.full(inside.shape, FEATURE_FACE)], axis=0)
    d2 = np.sum((cand - p[None]) ** 2, axis=-1)
    d2[3] = np.where(inside, d2[3], np.inf)
    which = np.argmin(d2, axis=0)
    pick = which[None, ..., None]
    best = np.take_along_axis(cand, np.broadcast_to(pick, (1,) + cand.shape[1:]), 0)[0]
    return best, np.take_along_axis(code, which[None], 0)[0], np.take_along_axis(d2, which[None], 0)[0]


def closest_brute_np(points, verts, faces, chunk=256):
    """Exhaustive closest-point scan over all triangles (lowest index wins ties)."""
    points = np.asarray(points, dtype=np.float64)
    a = verts[faces[:, 0]][None]
    b = verts[faces[:, 1]][None]
    c = verts[faces[:, 2]][None]
    npt = points.shape[0]
    closest = np.empty((npt, 3))
    tri = np.empty(npt, dtype=np.int64)
    feat = np.empty(npt, dtype=np.int64)
    dist2 = np.empty(npt)
    for s in range(0, npt, chunk):
        p = points[s : s + chunk, None, :]
        q, code, d2 = _closest_pairs(p, a, b, c)
        t_best = np.argmin(d2, axis=1)
        rows = np.arange(len(t_best))
        closest[s : s + chunk] = q[rows, t_best]
        feat[s : s + chunk] = code[rows, t_best]
        tri[s : s + chunk] = t_best
        dist2[s : s + chunk] = d2[rows, t_best]
    return closest, tri, feat, dist2


class CentroidIndex:
    """k-d tree over triangle centroids for pruned exact closest-point queries.

    The nearest centroid bounds the answer from above, so only triangles
    whose centroid lies within that bound plus the largest centroid-to-corner
    radius can hold the closest point.
    """

    def __init__(self, verts, faces):
        from scipy.spatial import cKDTree

        self.verts = np.asarray(verts, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        tri = self.verts[self.faces]
        cent = tri.mean(axis=1)
        self.radius = float(np.max(np.linalg.norm(tri - cent[:, None], axis=-1)))
        self.tree = cKDTree(cent)

    def query(self, points):
        points = np.asarray(points, dtype=np.float64)
        d0, _ = self.tree.query(points, k=1)
        lists = self.tree.query_ball_point(points, d0 + self.radius + 1e-12)
        counts = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(points))
        pt = np.repeat(np.arange(len(points)), counts)
        tr = np.concatenate([np.asarray(x, dtype=np.int64) for x in lists]) if len(points) else np.zeros(0, np.int64)
        f = self.faces[tr]
        q, code, d2 = _closest_pairs(points[pt], self.verts[f[:, 0]], self.verts[f[:, 1]], self.verts[f[:, 2]])
        order = np.lexsort((tr, d2, pt))
        first = order[np.r_[True, pt[order][1:] != pt[order][:-1]]]
        return q[first], tr[first], code[first], d2[first]


IMPLEMENTATIONS = {
    "mass_spring": (mass_spring_nb, mass_spring_np),
    "baraff_witkin": (baraff_witkin_nb, baraff_witkin_np),
    "stvk": (stvk_nb, stvk_np),
    "bending": (bending_nb, bending_np),
    "dihedral_angles": (dihedral_angles_nb, dihedral_angles_np),
    "skin": (skin_nb, skin_np),
}

_pick = 0 if USE_NUMBA else 1
mass_spring = IMPLEMENTATIONS["mass_spring"][_pick]
baraff_witkin = IMPLEMENTATIONS["baraff_witkin"][_pick]
stvk = IMPLEMENTATIONS["stvk"][_pick]
bending = IMPLEMENTATIONS["bending"][_pick]
dihedral_angles = IMPLEMENTATIONS["dihedral_angles"][_pick]
skin = IMPLEMENTATIONS["skin"][_pick]
