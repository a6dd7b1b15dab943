"""Hot numeric kernels: per-cell feasibility sweeps and bipartite matching.

Kernels are written as plain array code and compiled with numba's ``@njit``
when available.  Setting ``HARMONICPOSE_BACKEND=numpy`` (or running without
numba installed) selects the uncompiled pure-Python/NumPy path, which is
identical in semantics and is what the backend benchmark compares against.
Compiled dispatchers keep their original function under ``.py_func``, so the
fallback stays reachable even when numba is active.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    HAVE_NUMBA = False

    def prange(*args):
        return range(*args)


USE_NUMBA = HAVE_NUMBA and os.environ.get("HARMONICPOSE_BACKEND", "numba").lower() != "numpy"

if not USE_NUMBA:
    prange = range


def jit_kernel(parallel=False):
    """Conditional ``@njit``; a no-op decorator on the fallback path."""
    if USE_NUMBA:
        return njit(cache=True, parallel=parallel)
    return lambda func: func


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


TWO_PI = 2.0 * math.pi

MECH_CM = 0
MECH_MCM = 1
MECH_HCM = 2


# ---------------------------------------------------------------------------
# Bipartite maximum-cardinality matching (Hopcroft-Karp)
# ---------------------------------------------------------------------------

@jit_kernel()
def hopcroft_karp(n_left, n_right, indptr, indices):
    """Maximum-cardinality matching of a bipartite graph in CSR form.

    Returns (cardinality, match_l) where match_l[i] is the right vertex
    matched to left vertex i, or -1.  Adjacency order is preserved, so the
    witness matching is deterministic.
    """
    match_l = np.full(n_left, -1, dtype=np.int64)
    match_r = np.full(n_right, -1, dtype=np.int64)
    dist = np.empty(n_left, dtype=np.int64)
    queue = np.empty(n_left, dtype=np.int64)
    cap = n_left + n_right + 2
    stack_v = np.empty(cap, dtype=np.int64)
    stack_p = np.empty(cap, dtype=np.int64)
    stack_j = np.empty(cap, dtype=np.int64)
    card = 0
    while True:
        # BFS layering from free left vertices.
        qt = 0
        for i in range(n_left):
            if match_l[i] < 0:
                dist[i] = 0
                queue[qt] = i
                qt += 1
            else:
                dist[i] = -1
        dist_nil = -1
        qh = 0
        while qh < qt:
            i = queue[qh]
            qh += 1
            if dist_nil >= 0 and dist[i] >= dist_nil:
                continue
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                m2 = match_r[j]
                if m2 < 0:
                    if dist_nil < 0:
                        dist_nil = dist[i] + 1
                elif dist[m2] < 0:
                    dist[m2] = dist[i] + 1
                    queue[qt] = m2
                    qt += 1
        if dist_nil < 0:
            return card, match_l
        # DFS phase along shortest alternating paths.
        for root in range(n_left):
            if match_l[root] >= 0:
                continue
            depth = 0
            stack_v[0] = root
            stack_p[0] = indptr[root]
            while depth >= 0:
                v = stack_v[depth]
                p = stack_p[depth]
                hit = -1
                end = indptr[v + 1]
                while p < end:
                    j = indices[p]
                    p += 1
                    m2 = match_r[j]
                    if m2 < 0:
                        if dist[v] + 1 == dist_nil:
                            hit = j
                            break
                    elif dist[m2] == dist[v] + 1:
                        hit = j
                        break
                stack_p[depth] = p
                if hit < 0:
                    dist[v] = -1
                    depth -= 1
                    continue
                stack_j[depth] = hit
                m2 = match_r[hit]
                if m2 < 0:
                    for d in range(depth, -1, -1):
                        match_l[stack_v[d]] = stack_j[d]
                        match_r[stack_j[d]] = stack_v[d]
                    card += 1
                    depth = -1
                else:
                    depth += 1
                    stack_v[depth] = m2
                    stack_p[depth] = indptr[m2]
    return card, match_l


@jit_kernel()
def matching_from_edges(edge_i, edge_j, n_left, n_right):
    """Maximum-matching cardinality straight from an edge list.

    Builds the CSR adjacency by counting sort and runs Hopcroft-Karp; the
    whole post-inlier matching stage, as one compiled call.
    """
    n = edge_i.shape[0]
    indptr = np.zeros(n_left + 1, dtype=np.int64)
    for k in range(n):
        indptr[edge_i[k] + 1] += 1
    for i in range(n_left):
        indptr[i + 1] += indptr[i]
    indices = np.empty(n, dtype=np.int64)
    cursor = indptr[:-1].copy()
    for k in range(n):
        i = edge_i[k]
        indices[cursor[i]] = edge_j[k]
        cursor[i] += 1
    card, _ = hopcroft_karp(n_left, n_right, indptr, indices)
    return card


# ---------------------------------------------------------------------------
# Harmonic score of a fixed inlier edge list (bench / standalone evaluation)
# ---------------------------------------------------------------------------

@jit_kernel()
def hcm_eval(edge_i, edge_j, winc_x, winc_y, cx, cy,
             wx, wy, stamp_x, stamp_y, touched_x, touched_y, epoch):
    """Sum of log(1 + C * w) terms for one inlier edge list.

    Scratch arrays are epoch-stamped so repeated evaluations cost O(edges)
    without re-zeroing whole vertex buffers.  The per-vertex factors are
    folded into running products (spilled to a log accumulator before they
    can overflow), so the log is taken O(1) times rather than per vertex.
    """
    epoch[0] += 1
    cur = epoch[0]
    n = edge_i.shape[0]
    # One side per pass keeps the random accesses on a single buffer.
    ntx = 0
    for k in range(n):
        a = edge_i[k]
        if stamp_x[a] != cur:
            stamp_x[a] = cur
            wx[a] = 0.0
            touched_x[ntx] = a
            ntx += 1
        wx[a] += winc_x[k]
    nty = 0
    for k in range(n):
        b = edge_j[k]
        if stamp_y[b] != cur:
            stamp_y[b] = cur
            wy[b] = 0.0
            touched_y[nty] = b
            nty += 1
        wy[b] += winc_y[k]
    s = 0.0
    prod = 1.0
    for k in range(ntx):
        prod *= 1.0 + cx * wx[touched_x[k]]
        if prod > 1e280:
            s += math.log(prod)
            prod = 1.0
    for k in range(nty):
        prod *= 1.0 + cy * wy[touched_y[k]]
        if prod > 1e280:
            s += math.log(prod)
            prod = 1.0
    return s + math.log(prod)


@jit_kernel()
def hcm_eval_repeat(edge_i, edge_j, winc_x, winc_y, cx, cy,
                    wx, wy, stamp_x, stamp_y, touched_x, touched_y, epoch,
                    reps):
    """Repeat the harmonic evaluation; returns a checksum of the scores.

    Folds dispatch overhead out of per-evaluation timings.
    """
    total = 0.0
    for _ in range(reps):
        total += hcm_eval(edge_i, edge_j, winc_x, winc_y, cx, cy,
                          wx, wy, stamp_x, stamp_y, touched_x, touched_y,
                          epoch)
    return total


@jit_kernel()
def matching_repeat(edge_i, edge_j, n_left, n_right, reps):
    """Repeat the matching stage; returns a checksum of the cardinalities."""
    total = 0
    for _ in range(reps):
        total += matching_from_edges(edge_i, edge_j, n_left, n_right)
    return total


# ---------------------------------------------------------------------------
# Incremental augmenting-path pass for the matching-cardinality sweep
# ---------------------------------------------------------------------------

@jit_kernel()
def _augment_pass(n_left, edge_i, edge_j, left_indptr, left_edges, active,
                  match_l, match_r, visited, epoch, stack_v, stack_p, stack_e):
    """Try to grow the current matching by one augmenting path.

    A single search pass over all free left vertices; sufficient after any
    one edge insertion or deletion, since those change the optimum by at
    most one.
    """
    for src in range(n_left):
        if match_l[src] >= 0:
            continue
        if left_indptr[src] == left_indptr[src + 1]:
            continue
        epoch[0] += 1
        cur = epoch[0]
        depth = 0
        stack_v[0] = src
        stack_p[0] = left_indptr[src]
        while depth >= 0:
            v = stack_v[depth]
            p = stack_p[depth]
            hit = -1
            end = left_indptr[v + 1]
            while p < end:
                e = left_edges[p]
                p += 1
                if active[e]:
                    j = edge_j[e]
                    if visited[j] != cur:
                        visited[j] = cur
                        hit = e
                        break
            stack_p[depth] = p
            if hit < 0:
                depth -= 1
                continue
            stack_e[depth] = hit
            j = edge_j[hit]
            me = match_r[j]
            if me < 0:
                for d in range(depth, -1, -1):
                    ee = stack_e[d]
                    match_l[edge_i[ee]] = ee
                    match_r[edge_j[ee]] = ee
                return 1
            depth += 1
            stack_v[depth] = edge_i[me]
            stack_p[depth] = left_indptr[edge_i[me]]
    return 0


# ---------------------------------------------------------------------------
# Per-cell evaluation: feasibility arcs + endpoint sweep
# ---------------------------------------------------------------------------

@jit_kernel()
def _eval_cell(c1, c2,
               th1e, ph1e, sth1e, cth1e,
               th2e, ph2e, sth2e, cth2e,
               asn1e, asn2e,
               edge_i, edge_j, winc_x, winc_y,
               left_indptr, left_edges,
               mech, two_eps, cos_2eps, cx, cy,
               ev_phi, ev_kind, ev_eid, sv_phi, sv_kind, sv_eid,
               base_eid, wx, wy, match_l, match_r, active,
               visited, epoch, stack_v, stack_p, stack_e):
    """Optimal score over phi for one (v1, v2) cell, plus a phi attaining it.

    Builds the feasible phi arc of every association from the precomputed
    polar tables, sweeps the sorted endpoints, and reports the best score.
    The returned phi is the midpoint of the optimal region so that every
    counted association is strictly interior when re-scored from residuals.

    ``asn1e``/``asn2e`` carry the arcsin(sin eps / sin theta) terms of the
    feasibility half-width (pi where undefined), so the common theta1 <
    theta2 branch needs no per-cell trig.  Harmonic scores are tracked as a
    running product of the (1 + C w) factors and converted to a log at the
    end; the factor count is small enough that neither overflow nor drift
    beyond ~1e-14 relative can occur.
    """
    n_edges = edge_i.shape[0]
    m = 0
    nb = 0
    for e in range(n_edges):
        t1 = th1e[c1, e]
        t2 = th2e[c2, e]
        if t1 - t2 > two_eps:
            continue
        if t1 < t2:
            om = asn1e[c1, e] + asn2e[c2, e]
        else:
            den = sth1e[c1, e] * sth2e[c2, e]
            if den <= 0.0:
                om = math.pi
            else:
                cc = (cos_2eps - cth1e[c1, e] * cth2e[c2, e]) / den
                if cc < -1.0 or cc > 1.0:
                    om = math.pi
                else:
                    om = math.acos(cc)
        if om >= math.pi - 1e-12:
            base_eid[nb] = e
            nb += 1
            continue
        center = (ph2e[c2, e] - ph1e[c1, e]) % TWO_PI
        lo = center - om
        hi = center + om
        if lo < 0.0:
            ev_phi[m] = 0.0
            ev_kind[m] = 0
            ev_eid[m] = e
            m += 1
            ev_phi[m] = hi
            ev_kind[m] = 1
            ev_eid[m] = e
            m += 1
            ev_phi[m] = lo + TWO_PI
            ev_kind[m] = 0
            ev_eid[m] = e
            m += 1
            ev_phi[m] = TWO_PI
            ev_kind[m] = 1
            ev_eid[m] = e
            m += 1
        elif hi > TWO_PI:
            ev_phi[m] = 0.0
            ev_kind[m] = 0
            ev_eid[m] = e
            m += 1
            ev_phi[m] = hi - TWO_PI
            ev_kind[m] = 1
            ev_eid[m] = e
            m += 1
            ev_phi[m] = lo
            ev_kind[m] = 0
            ev_eid[m] = e
            m += 1
            ev_phi[m] = TWO_PI
            ev_kind[m] = 1
            ev_eid[m] = e
            m += 1
        else:
            ev_phi[m] = lo
            ev_kind[m] = 0
            ev_eid[m] = e
            m += 1
            ev_phi[m] = hi
            ev_kind[m] = 1
            ev_eid[m] = e
            m += 1

    if m > 0:
        if m <= 48:
            # Lexicographic insertion sort on (phi, kind, edge id); event
            # lists are short, avoiding argsort's allocation.
            for a_ in range(m):
                pp = ev_phi[a_]
                kk = ev_kind[a_]
                ee = ev_eid[a_]
                b_ = a_ - 1
                while b_ >= 0 and (sv_phi[b_] > pp or
                                   (sv_phi[b_] == pp and
                                    (sv_kind[b_] > kk or
                                     (sv_kind[b_] == kk and sv_eid[b_] > ee)))):
                    sv_phi[b_ + 1] = sv_phi[b_]
                    sv_kind[b_ + 1] = sv_kind[b_]
                    sv_eid[b_ + 1] = sv_eid[b_]
                    b_ = b_ - 1
                sv_phi[b_ + 1] = pp
                sv_kind[b_ + 1] = kk
                sv_eid[b_ + 1] = ee
        else:
            order = np.argsort(ev_phi[:m])
            for k in range(m):
                o = order[k]
                sv_phi[k] = ev_phi[o]
                sv_kind[k] = ev_kind[o]
                sv_eid[k] = ev_eid[o]
            # Normalize equal-phi runs to (enter-before-exit, then edge id)
            # so the sweep order is reproducible regardless of sort
            # stability.
            start = 0
            while start < m:
                stop = start + 1
                while stop < m and sv_phi[stop] == sv_phi[start]:
                    stop += 1
                if stop - start > 1:
                    for a_ in range(start + 1, stop):
                        kk = sv_kind[a_]
                        ee = sv_eid[a_]
                        b_ = a_ - 1
                        while b_ >= start and (sv_kind[b_] > kk or
                                               (sv_kind[b_] == kk and
                                                sv_eid[b_] > ee)):
                            sv_kind[b_ + 1] = sv_kind[b_]
                            sv_eid[b_ + 1] = sv_eid[b_]
                            b_ = b_ - 1
                        sv_kind[b_ + 1] = kk
                        sv_eid[b_ + 1] = ee
                start = stop

    # Base state: associations feasible at every phi.
    card = 0
    cur = 0.0
    prod = 1.0
    if mech == MECH_CM:
        cur = float(nb)
    elif mech == MECH_HCM:
        for b in range(nb):
            e = base_eid[b]
            a = edge_i[e]
            r = edge_j[e]
            oldx = wx[a]
            newx = oldx + winc_x[e]
            oldy = wy[r]
            newy = oldy + winc_y[e]
            prod *= ((1.0 + cx * newx) / (1.0 + cx * oldx)
                     * (1.0 + cy * newy) / (1.0 + cy * oldy))
            wx[a] = newx
            wy[r] = newy
        cur = prod
    else:
        n_left = match_l.shape[0]
        for b in range(nb):
            active[base_eid[b]] = True
            card += _augment_pass(n_left, edge_i, edge_j, left_indptr,
                                  left_edges, active, match_l, match_r,
                                  visited, epoch, stack_v, stack_p, stack_e)
        cur = float(card)

    best = cur
    best_k = -1
    for k in range(m):
        e = sv_eid[k]
        entering = sv_kind[k] == 0
        if mech == MECH_CM:
            if entering:
                cur += 1.0
            else:
                cur -= 1.0
        elif mech == MECH_HCM:
            a = edge_i[e]
            r = edge_j[e]
            oldx = wx[a]
            oldy = wy[r]
            if entering:
                newx = oldx + winc_x[e]
                newy = oldy + winc_y[e]
            else:
                newx = oldx - winc_x[e]
                newy = oldy - winc_y[e]
            cur *= ((1.0 + cx * newx) / (1.0 + cx * oldx)
                    * (1.0 + cy * newy) / (1.0 + cy * oldy))
            wx[a] = newx
            wy[r] = newy
        else:
            n_left = match_l.shape[0]
            if entering:
                active[e] = True
                card += _augment_pass(n_left, edge_i, edge_j, left_indptr,
                                      left_edges, active, match_l, match_r,
                                      visited, epoch, stack_v, stack_p, stack_e)
            else:
                active[e] = False
                if match_l[edge_i[e]] == e:
                    match_l[edge_i[e]] = -1
                    match_r[edge_j[e]] = -1
                    card -= 1
                    card += _augment_pass(n_left, edge_i, edge_j, left_indptr,
                                          left_edges, active, match_l, match_r,
                                          visited, epoch, stack_v, stack_p,
                                          stack_e)
            cur = float(card)
        if cur > best:
            best = cur
            best_k = k

    if best_k < 0:
        phi_star = 0.0
    elif best_k + 1 < m:
        phi_star = 0.5 * (sv_phi[best_k] + sv_phi[best_k + 1])
    else:
        phi_star = sv_phi[best_k]

    # Leave scratch state clean for the next cell.
    if mech == MECH_HCM:
        for b in range(nb):
            e = base_eid[b]
            wx[edge_i[e]] = 0.0
            wy[edge_j[e]] = 0.0
        for k in range(m):
            e = sv_eid[k]
            wx[edge_i[e]] = 0.0
            wy[edge_j[e]] = 0.0
        best = math.log(best)
    elif mech == MECH_MCM:
        for b in range(nb):
            e = base_eid[b]
            active[e] = False
            if match_l[edge_i[e]] == e:
                match_l[edge_i[e]] = -1
                match_r[edge_j[e]] = -1

    return best, phi_star


@jit_kernel(parallel=True)
def eval_rows(c1_start, c1_stop, n_left, n_right,
              th1e, ph1e, sth1e, cth1e,
              th2e, ph2e, sth2e, cth2e,
              asn1e, asn2e,
              edge_i, edge_j, winc_x, winc_y,
              left_indptr, left_edges,
              mech, two_eps, cos_2eps, cx, cy,
              out_max):
    """Best over-(c2, phi) score for each v1 cell in [c1_start, c1_stop)."""
    nc2 = th2e.shape[0]
    n_edges = edge_i.shape[0]
    nev = 4 * n_edges + 4
    for idx in prange(c1_stop - c1_start):
        c1 = c1_start + idx
        ev_phi = np.empty(nev, dtype=np.float64)
        ev_kind = np.empty(nev, dtype=np.int64)
        ev_eid = np.empty(nev, dtype=np.int64)
        sv_phi = np.empty(nev, dtype=np.float64)
        sv_kind = np.empty(nev, dtype=np.int64)
        sv_eid = np.empty(nev, dtype=np.int64)
        base_eid = np.empty(n_edges + 1, dtype=np.int64)
        wx = np.zeros(n_left, dtype=np.float64)
        wy = np.zeros(n_right, dtype=np.float64)
        match_l = np.full(n_left, -1, dtype=np.int64)
        match_r = np.full(n_right, -1, dtype=np.int64)
        active = np.zeros(n_edges, dtype=np.bool_)
        visited = np.zeros(n_right, dtype=np.int64)
        epoch = np.zeros(1, dtype=np.int64)
        cap = n_left + n_right + 2
        stack_v = np.empty(cap, dtype=np.int64)
        stack_p = np.empty(cap, dtype=np.int64)
        stack_e = np.empty(cap, dtype=np.int64)
        best_row = -1.0
        for c2 in range(nc2):
            s, _ = _eval_cell(c1, c2, th1e, ph1e, sth1e, cth1e,
                              th2e, ph2e, sth2e, cth2e,
                              asn1e, asn2e,
                              edge_i, edge_j, winc_x, winc_y,
                              left_indptr, left_edges,
                              mech, two_eps, cos_2eps, cx, cy,
                              ev_phi, ev_kind, ev_eid, sv_phi, sv_kind, sv_eid,
                              base_eid, wx, wy, match_l, match_r, active,
                              visited, epoch, stack_v, stack_p, stack_e)
            if s > best_row:
                best_row = s
        out_max[c1] = best_row


@jit_kernel()
def collect_cells(rows, threshold, n_left, n_right,
                  th1e, ph1e, sth1e, cth1e,
                  th2e, ph2e, sth2e, cth2e,
                  asn1e, asn2e,
                  edge_i, edge_j, winc_x, winc_y,
                  left_indptr, left_edges,
                  mech, two_eps, cos_2eps, cx, cy,
                  out_c1, out_c2, out_score, out_phi, cap_out):
    """Gather cells scoring at least ``threshold``, in cell order.

    Returns the number written; a value of ``cap_out + 1`` signals overflow
    (the first ``cap_out`` entries are kept).
    """
    nc2 = th2e.shape[0]
    n_edges = edge_i.shape[0]
    nev = 4 * n_edges + 4
    ev_phi = np.empty(nev, dtype=np.float64)
    ev_kind = np.empty(nev, dtype=np.int64)
    ev_eid = np.empty(nev, dtype=np.int64)
    sv_phi = np.empty(nev, dtype=np.float64)
    sv_kind = np.empty(nev, dtype=np.int64)
    sv_eid = np.empty(nev, dtype=np.int64)
    base_eid = np.empty(n_edges + 1, dtype=np.int64)
    wx = np.zeros(n_left, dtype=np.float64)
    wy = np.zeros(n_right, dtype=np.float64)
    match_l = np.full(n_left, -1, dtype=np.int64)
    match_r = np.full(n_right, -1, dtype=np.int64)
    active = np.zeros(n_edges, dtype=np.bool_)
    visited = np.zeros(n_right, dtype=np.int64)
    epoch = np.zeros(1, dtype=np.int64)
    cap = n_left + n_right + 2
    stack_v = np.empty(cap, dtype=np.int64)
    stack_p = np.empty(cap, dtype=np.int64)
    stack_e = np.empty(cap, dtype=np.int64)
    n_out = 0
    for ridx in range(rows.shape[0]):
        c1 = rows[ridx]
        for c2 in range(nc2):
            s, phi = _eval_cell(c1, c2, th1e, ph1e, sth1e, cth1e,
                                th2e, ph2e, sth2e, cth2e,
                                asn1e, asn2e,
                                edge_i, edge_j, winc_x, winc_y,
                                left_indptr, left_edges,
                                mech, two_eps, cos_2eps, cx, cy,
                                ev_phi, ev_kind, ev_eid, sv_phi, sv_kind,
                                sv_eid, base_eid, wx, wy, match_l, match_r,
                                active, visited, epoch, stack_v, stack_p,
                                stack_e)
            if s >= threshold:
                if n_out >= cap_out:
                    return n_out + 1
                out_c1[n_out] = c1
                out_c2[n_out] = c2
                out_score[n_out] = s
                out_phi[n_out] = phi
                n_out += 1
    return n_out


def fallback(func):
    """Uncompiled version of a kernel (itself, when numba is off)."""
    return getattr(func, "py_func", func)
