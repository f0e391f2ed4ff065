"""Numba kernel for stochastic grow-from-root tree construction.

The kernel works on flat arrays only. A node owns a contiguous segment
[lo, hi) of a per-feature workspace ``ws``; ``ws[j, lo:hi]`` holds the node's
member row ids sorted by feature j, so candidate evaluation is a single
prefix-sum pass per feature and a split is a stable partition of each
segment. Random numbers come from pre-drawn buffers so that draw order is
reproducible and independent of the RNG implementation.

Conventions:
  - routing sends ``value <= threshold`` left;
  - a node's running-variable interval is (x_lo, x_hi], so the cutoff lands
    in the node iff x_lo < c <= x_hi;
  - sufficient statistics are precision-weighted: W = sum of per-row weights,
    WR = sum of weight * residual, giving the integrated leaf likelihood
    -0.5*log(1 + tau*W) + tau*WR^2 / (2*(1 + tau*W)) up to terms that cancel
    across candidate splits at a node.
"""

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def select_cutpoint_positions(vals, k, out_pos):
    """Candidate split positions in a sorted value array.

    A position t means "threshold = vals[t]", sending the first t+1 entries
    left. Positions are the last index of each tied run; the run containing
    the maximum is never a candidate (its right child would be empty). When
    more than k distinct splits exist, k evenly spaced empirical quantile
    picks are kept, deduplicated. Returns the number of positions written.
    """
    m = vals.shape[0]
    if m < 2:
        return 0
    nb = 0
    for t in range(m - 1):
        if vals[t] != vals[t + 1]:
            nb += 1
    if nb == 0:
        return 0
    npos = 0
    if nb <= k:
        for t in range(m - 1):
            if vals[t] != vals[t + 1]:
                out_pos[npos] = t
                npos += 1
    else:
        prev = -1
        for q in range(k):
            li = ((q + 1) * m) // (k + 1)
            if li > m - 1:
                li = m - 1
            t = li
            while t < m - 1 and vals[t + 1] == vals[t]:
                t += 1
            if t >= m - 1:
                continue
            if t != prev:
                out_pos[npos] = t
                npos += 1
                prev = t
    return npos


@njit(cache=True, inline="always")
def _leaf_loglik(W, WR, tau):
    denom = 1.0 + tau * W
    return -0.5 * np.log(denom) + tau * WR * WR / (2.0 * denom)


@njit(cache=True)
def grow_tree(
    F,
    ws,
    lo0,
    hi0,
    wr,
    w,
    strip_l,
    strip_r,
    policy_on,
    cutoff,
    n_omin,
    alpha_frac,
    entry_depth,
    x_lo0,
    x_hi0,
    max_depth,
    min_node,
    k_cut,
    tree_alpha,
    tree_beta,
    tau_leaf,
    uniforms,
    normals,
    pred,
    mark,
):
    """Grow one tree over ws[:, lo0:hi0]; returns preorder node arrays.

    Returns (var, thr, left, right, leaf, n_nodes, n_invalid_leaves,
    uniforms_used, normals_used). var[i] == -1 marks a leaf, whose value is
    leaf[i]; pred[row] receives the leaf value of every training row.
    """
    n, P = F.shape
    m0 = hi0 - lo0
    cap = 2 * m0 + 2
    node_var = np.full(cap, -1, np.int64)
    node_thr = np.zeros(cap, np.float64)
    node_left = np.full(cap, -1, np.int64)
    node_right = np.full(cap, -1, np.int64)
    node_leaf = np.zeros(cap, np.float64)

    scap = m0 + 4
    st_lo = np.empty(scap, np.int64)
    st_hi = np.empty(scap, np.int64)
    st_depth = np.empty(scap, np.int64)
    st_par = np.empty(scap, np.int64)
    st_side = np.empty(scap, np.int64)
    st_xlo = np.empty(scap, np.float64)
    st_xhi = np.empty(scap, np.float64)

    vals = np.empty(m0, np.float64)
    csw = np.empty(m0, np.float64)
    cswr = np.empty(m0, np.float64)
    csnl = np.empty(m0, np.int64)
    csnr = np.empty(m0, np.int64)
    pos_buf = np.empty(m0 if m0 > 1 else 2, np.int64)
    scratch = np.empty(m0, np.int64)

    kmax = k_cut if k_cut < m0 else m0
    maxc = P * (kmax if kmax > 0 else 1)
    c_feat = np.empty(maxc, np.int64)
    c_cnt = np.empty(maxc, np.int64)
    c_thr = np.empty(maxc, np.float64)
    c_lw = np.empty(maxc, np.float64)
    c_lwr = np.empty(maxc, np.float64)
    c_lnl = np.empty(maxc, np.int64)
    c_lnr = np.empty(maxc, np.int64)
    c_logl = np.empty(maxc, np.float64)
    c_wgt = np.empty(maxc, np.float64)

    nu = 0
    nn = 0
    nnode = 0
    ninvalid = 0

    sp = 0
    st_lo[0] = lo0
    st_hi[0] = hi0
    st_depth[0] = entry_depth
    st_par[0] = -1
    st_side[0] = 0
    st_xlo[0] = x_lo0
    st_xhi[0] = x_hi0
    sp = 1

    while sp > 0:
        sp -= 1
        lo = st_lo[sp]
        hi = st_hi[sp]
        depth = st_depth[sp]
        par = st_par[sp]
        side = st_side[sp]
        x_lo = st_xlo[sp]
        x_hi = st_xhi[sp]

        nid = nnode
        nnode += 1
        if par >= 0:
            if side == 0:
                node_left[par] = nid
            else:
                node_right[par] = nid

        m = hi - lo
        Wn = 0.0
        WRn = 0.0
        nl = 0
        nr = 0
        contains = False
        for t in range(lo, hi):
            idx = ws[0, t]
            Wn += w[idx]
            WRn += wr[idx]
        if policy_on and (x_lo < cutoff) and (cutoff <= x_hi):
            contains = True
            for t in range(lo, hi):
                idx = ws[0, t]
                nl += strip_l[idx]
                nr += strip_r[idx]
        must_split = contains and ((nl + nr) / m < alpha_frac)

        hard_stop = (depth >= max_depth) or (m < 2 * min_node) or (m < 2)
        if hard_stop and not must_split:
            val = tau_leaf * WRn / (1.0 + tau_leaf * Wn) + np.sqrt(
                tau_leaf / (1.0 + tau_leaf * Wn)
            ) * normals[nn]
            nn += 1
            node_var[nid] = -1
            node_leaf[nid] = val
            for t in range(lo, hi):
                pred[ws[0, t]] = val
            continue

        # enumerate candidate splits
        need_strip = policy_on and contains
        ncand = 0
        if m >= 2:
            for j in range(P):
                cw = 0.0
                cwr = 0.0
                cnl = 0
                cnr = 0
                for t in range(m):
                    idx = ws[j, lo + t]
                    vals[t] = F[idx, j]
                    cw += w[idx]
                    cwr += wr[idx]
                    csw[t] = cw
                    cswr[t] = cwr
                    if need_strip:
                        cnl += strip_l[idx]
                        cnr += strip_r[idx]
                        csnl[t] = cnl
                        csnr[t] = cnr
                npos = select_cutpoint_positions(vals[:m], k_cut, pos_buf)
                for q in range(npos):
                    t = pos_buf[q]
                    c_feat[ncand] = j
                    c_cnt[ncand] = t + 1
                    c_thr[ncand] = vals[t]
                    c_lw[ncand] = csw[t]
                    c_lwr[ncand] = cswr[t]
                    if need_strip:
                        c_lnl[ncand] = csnl[t]
                        c_lnr[ncand] = csnr[t]
                    ncand += 1

        # score candidates; zero out splits violating the per-side minimum
        n_valid = 0
        maxlog = NEG_INF
        for ci in range(ncand):
            lW = c_lw[ci]
            lWR = c_lwr[ci]
            ll = _leaf_loglik(lW, lWR, tau_leaf) + _leaf_loglik(
                Wn - lW, WRn - lWR, tau_leaf
            )
            valid = True
            if need_strip:
                if c_feat[ci] == 0:
                    left_contains = c_thr[ci] >= cutoff
                    right_contains = not left_contains
                else:
                    left_contains = True
                    right_contains = True
                if left_contains:
                    lmin = c_lnl[ci]
                    if c_lnr[ci] < lmin:
                        lmin = c_lnr[ci]
                    if lmin < n_omin:
                        valid = False
                if valid and right_contains:
                    rmin = nl - c_lnl[ci]
                    if nr - c_lnr[ci] < rmin:
                        rmin = nr - c_lnr[ci]
                    if rmin < n_omin:
                        valid = False
            if valid:
                c_logl[ci] = ll
                n_valid += 1
                if ll > maxlog:
                    maxlog = ll
            else:
                c_logl[ci] = NEG_INF

        forced_leaf = False
        if ncand == 0 or (must_split and n_valid == 0):
            if must_split:
                ninvalid += 1
            forced_leaf = True

        if forced_leaf:
            val = tau_leaf * WRn / (1.0 + tau_leaf * Wn) + np.sqrt(
                tau_leaf / (1.0 + tau_leaf * Wn)
            ) * normals[nn]
            nn += 1
            node_var[nid] = -1
            node_leaf[nid] = val
            for t in range(lo, hi):
                pred[ws[0, t]] = val
            continue

        # no-split weight: |C| * ((1 + d)^beta / alpha - 1) * m(s_node)
        stop_logw = NEG_INF
        if not must_split and not hard_stop:
            tlog = tree_beta * np.log(1.0 + depth) - np.log(tree_alpha)
            if tlog > 50.0:
                gl = tlog
            else:
                gl = np.log(np.expm1(tlog))
            stop_logw = np.log(float(ncand)) + gl + _leaf_loglik(Wn, WRn, tau_leaf)
            if stop_logw > maxlog:
                maxlog = stop_logw

        total = 0.0
        for ci in range(ncand):
            if c_logl[ci] == NEG_INF:
                c_wgt[ci] = 0.0
            else:
                c_wgt[ci] = np.exp(c_logl[ci] - maxlog)
            total += c_wgt[ci]
        stop_w = 0.0
        if stop_logw != NEG_INF:
            stop_w = np.exp(stop_logw - maxlog)
        total += stop_w

        target = uniforms[nu] * total
        nu += 1
        pick = -1
        acc = 0.0
        for ci in range(ncand):
            acc += c_wgt[ci]
            if target < acc:
                pick = ci
                break

        if pick < 0:
            val = tau_leaf * WRn / (1.0 + tau_leaf * Wn) + np.sqrt(
                tau_leaf / (1.0 + tau_leaf * Wn)
            ) * normals[nn]
            nn += 1
            node_var[nid] = -1
            node_leaf[nid] = val
            for t in range(lo, hi):
                pred[ws[0, t]] = val
            continue

        # realize the split
        j = c_feat[pick]
        lc = c_cnt[pick]
        thr = c_thr[pick]
        node_var[nid] = j
        node_thr[nid] = thr

        for t in range(lc):
            mark[ws[j, lo + t]] = 1
        for jj in range(P):
            if jj == j:
                continue
            nlft = 0
            nrgt = 0
            for t in range(m):
                idx = ws[jj, lo + t]
                if mark[idx] == 1:
                    ws[jj, lo + nlft] = idx
                    nlft += 1
                else:
                    scratch[nrgt] = idx
                    nrgt += 1
            for t in range(nrgt):
                ws[jj, lo + nlft + t] = scratch[t]
        for t in range(lc):
            mark[ws[j, lo + t]] = 0

        if j == 0:
            lxlo, lxhi = x_lo, thr
            rxlo, rxhi = thr, x_hi
        else:
            lxlo, lxhi = x_lo, x_hi
            rxlo, rxhi = x_lo, x_hi

        st_lo[sp] = lo + lc
        st_hi[sp] = hi
        st_depth[sp] = depth + 1
        st_par[sp] = nid
        st_side[sp] = 1
        st_xlo[sp] = rxlo
        st_xhi[sp] = rxhi
        sp += 1
        st_lo[sp] = lo
        st_hi[sp] = lo + lc
        st_depth[sp] = depth + 1
        st_par[sp] = nid
        st_side[sp] = 0
        st_xlo[sp] = lxlo
        st_xhi[sp] = lxhi
        sp += 1

    return (
        node_var[:nnode].copy(),
        node_thr[:nnode].copy(),
        node_left[:nnode].copy(),
        node_right[:nnode].copy(),
        node_leaf[:nnode].copy(),
        nnode,
        ninvalid,
        nu,
        nn,
    )
