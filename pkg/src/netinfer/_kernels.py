"""Compiled Gibbs-sweep inner loops.

One systematic scan resamples every response and then every
overlapping pair of units in lexicographic order.  Pairs whose
neighborhoods do not overlap never enter any other coordinate's full
conditional, so the driver resamples them as a vectorised block after
the compiled scan; the stationary law is unchanged.

The kernels maintain, incrementally per edge flip:

* ``t``    -- per-pair counts of neighborhood-gated two-paths,
* ``adj``  -- per-unit lists of overlap-edge neighbours,
* ``sx/sy`` (undirected) or ``s_in/s_inx`` (directed) -- the running
  spillover sums entering the response conditionals.

Randomness comes from an explicit 64-bit counter-mix generator
(splitmix64) whose state is passed in, so identical seeds reproduce
draw sequences bit for bit.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _next_unit(state):
    """Uniform double in [0, 1) from a splitmix64 stream."""
    state[0] = state[0] + _GOLDEN
    x = state[0]
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    x = x ^ (x >> np.uint64(31))
    return float(x >> np.uint64(11)) * _INV53


@njit(cache=True, inline="always")
def _sigmoid(eta):
    if eta >= 0.0:
        return 1.0 / (1.0 + np.exp(-eta))
    e = np.exp(eta)
    return e / (1.0 + e)


@njit(cache=True)
def _adj_remove(adj, deg, i, j):
    for a in range(deg[i]):
        if adj[i, a] == j:
            deg[i] -= 1
            adj[i, a] = adj[i, deg[i]]
            return


# --------------------------------------------------------------------------
# Undirected kernel
# --------------------------------------------------------------------------

@njit(cache=True)
def _remove_edge_und(z, t, adj, deg, nb, x, y, sx, sy, i, j):
    z[i, j] = 0
    z[j, i] = 0
    # Two-paths destroyed by losing edge {i, j}: pairs (i, b) routed
    # through j and pairs (j, b) routed through i.
    if nb[i, j]:
        for a in range(deg[j]):
            b = adj[j, a]
            if b != i and nb[b, j]:
                t[i, b] -= 1
                t[b, i] -= 1
    if nb[j, i]:
        for a in range(deg[i]):
            b = adj[i, a]
            if b != j and nb[b, i]:
                t[j, b] -= 1
                t[b, j] -= 1
    _adj_remove(adj, deg, i, j)
    _adj_remove(adj, deg, j, i)
    sx[i] -= x[j]
    sy[i] -= y[j]
    sx[j] -= x[i]
    sy[j] -= y[i]


@njit(cache=True)
def _add_edge_und(z, t, adj, deg, nb, x, y, sx, sy, i, j):
    if nb[i, j]:
        for a in range(deg[j]):
            b = adj[j, a]
            if b != i and nb[b, j]:
                t[i, b] += 1
                t[b, i] += 1
    if nb[j, i]:
        for a in range(deg[i]):
            b = adj[i, a]
            if b != j and nb[b, i]:
                t[j, b] += 1
                t[b, j] += 1
    adj[i, deg[i]] = j
    deg[i] += 1
    adj[j, deg[j]] = i
    deg[j] += 1
    z[i, j] = 1
    z[j, i] = 1
    sx[i] += x[j]
    sy[i] += y[j]
    sx[j] += x[i]
    sy[j] += y[i]


@njit(cache=True)
def _delta_und(z, t, adj, deg, nb, i, j):
    """Transitivity change statistic at the state with z[i,j] = 0."""
    cnt = 1 if t[i, j] >= 1 else 0
    if nb[i, j]:
        for a in range(deg[i]):
            b = adj[i, a]
            if b != j and z[j, b] == 1 and nb[b, j] and t[i, b] == 0:
                cnt += 1
    if nb[j, i]:
        for a in range(deg[j]):
            b = adj[j, a]
            if b != i and z[i, b] == 1 and nb[b, i] and t[j, b] == 0:
                cnt += 1
    return cnt


@njit(cache=True)
def sweep_undirected(y, z, t, adj, deg, nb, x, sx, sy,
                     alpha, a_y, b_xy, g_zz, g_xyz, g_yyz,
                     ov_i, ov_j, rng_state, update_y, update_z):
    n = y.shape[0]
    if update_y:
        for i in range(n):
            eta = a_y + b_xy * x[i] + g_xyz * sx[i] + g_yyz * sy[i]
            newy = 1.0 if _next_unit(rng_state) < _sigmoid(eta) else 0.0
            d = newy - y[i]
            if d != 0.0:
                y[i] = newy
                for a in range(deg[i]):
                    sy[adj[i, a]] += d
    if update_z:
        for pidx in range(ov_i.shape[0]):
            i = ov_i[pidx]
            j = ov_j[pidx]
            if z[i, j] == 1:
                _remove_edge_und(z, t, adj, deg, nb, x, y, sx, sy, i, j)
            delta = _delta_und(z, t, adj, deg, nb, i, j)
            eta = alpha[i] + alpha[j] + g_zz * delta \
                + g_xyz * (x[i] * y[j] + x[j] * y[i]) + g_yyz * y[i] * y[j]
            if _next_unit(rng_state) < _sigmoid(eta):
                _add_edge_und(z, t, adj, deg, nb, x, y, sx, sy, i, j)


# --------------------------------------------------------------------------
# Directed kernel
# --------------------------------------------------------------------------

@njit(cache=True)
def _remove_edge_dir(z, t, out_adj, out_deg, in_adj, in_deg, nb, x1, s_in, s_inx, i, j):
    z[i, j] = 0
    if nb[i, j]:
        for a in range(out_deg[j]):
            b = out_adj[j, a]
            if b != i and nb[b, j]:
                t[i, b] -= 1
    if nb[j, i]:
        for a in range(in_deg[i]):
            b = in_adj[i, a]
            if b != j and nb[b, i]:
                t[b, j] -= 1
    _adj_remove(out_adj, out_deg, i, j)
    _adj_remove(in_adj, in_deg, j, i)
    s_in[j] -= 1.0
    s_inx[j] -= x1[i]


@njit(cache=True)
def _add_edge_dir(z, t, out_adj, out_deg, in_adj, in_deg, nb, x1, s_in, s_inx, i, j):
    if nb[i, j]:
        for a in range(out_deg[j]):
            b = out_adj[j, a]
            if b != i and nb[b, j]:
                t[i, b] += 1
    if nb[j, i]:
        for a in range(in_deg[i]):
            b = in_adj[i, a]
            if b != j and nb[b, i]:
                t[b, j] += 1
    out_adj[i, out_deg[i]] = j
    out_deg[i] += 1
    in_adj[j, in_deg[j]] = i
    in_deg[j] += 1
    z[i, j] = 1
    s_in[j] += 1.0
    s_inx[j] += x1[i]


@njit(cache=True)
def _delta_dir(z, t, out_adj, out_deg, in_adj, in_deg, nb, i, j):
    cnt = 1 if t[i, j] >= 1 else 0
    if nb[i, j]:
        for a in range(out_deg[i]):
            b = out_adj[i, a]
            if b != j and z[j, b] == 1 and nb[b, j] and t[i, b] == 0:
                cnt += 1
    if nb[j, i]:
        for a in range(in_deg[j]):
            b = in_adj[j, a]
            if b != i and z[b, i] == 1 and nb[b, i] and t[b, j] == 0:
                cnt += 1
    return cnt


@njit(cache=True)
def sweep_directed(y, z, t, out_adj, out_deg, in_adj, in_deg, nb, x1, xstat,
                   s_in, s_inx, alpha_out, alpha_in, resp_base, g_yz, g_xyz,
                   g_zz1, g_zz2, ov_i, ov_j, rng_state, update_y, update_z):
    n = y.shape[0]
    if update_y:
        for i in range(n):
            eta = resp_base[i] + g_yz * s_in[i] + g_xyz * s_inx[i]
            y[i] = 1.0 if _next_unit(rng_state) < _sigmoid(eta) else 0.0
    if update_z:
        for pidx in range(ov_i.shape[0]):
            i = ov_i[pidx]
            j = ov_j[pidx]
            if z[i, j] == 1:
                _remove_edge_dir(z, t, out_adj, out_deg, in_adj, in_deg, nb,
                                 x1, s_in, s_inx, i, j)
            delta = _delta_dir(z, t, out_adj, out_deg, in_adj, in_deg, nb, i, j)
            eta = alpha_out[i] + alpha_in[j] + xstat[i, j] \
                + (g_yz + g_xyz * x1[i]) * y[j] \
                + g_zz1 * z[j, i] + g_zz2 * delta
            if _next_unit(rng_state) < _sigmoid(eta):
                _add_edge_dir(z, t, out_adj, out_deg, in_adj, in_deg, nb,
                              x1, s_in, s_inx, i, j)
