"""Pure-numpy fallback kernels (vectorized per triangle / per tap).

Semantics match _impl_numba; selected via the SKETCHFIT_BACKEND env flag.
"""

import numpy as np

CUT_LOGIT = 20.7
EPS_AREA = 1e-12
EPS_VAR = 1e-12


def _reflect_idx(i, n):
    i = np.asarray(i)
    i = np.abs(i)
    i = np.where(i >= n, 2 * n - 2 - i, i)
    return np.abs(i)  # second bounce for tiny n


def blur2d_fwd(x, w):
    h, wd = x.shape
    r = (len(w) - 1) // 2
    ks = np.arange(len(w)) - r
    tmp = np.zeros_like(x)
    for k, off in enumerate(ks):
        idx = _reflect_idx(np.arange(wd) + off, wd)
        tmp = tmp + w[k] * x[:, idx] if k else w[k] * x[:, idx]
    out = np.zeros_like(x)
    for k, off in enumerate(ks):
        idx = _reflect_idx(np.arange(h) + off, h)
        out = out + w[k] * tmp[idx, :] if k else w[k] * tmp[idx, :]
    return out


def blur2d_adj(g, w):
    h, wd = g.shape
    r = (len(w) - 1) // 2
    ks = np.arange(len(w)) - r
    tmp = np.zeros_like(g)
    for k, off in enumerate(ks):
        idx = _reflect_idx(np.arange(h) + off, h)
        np.add.at(tmp, idx, w[k] * g)
    out = np.zeros_like(g)
    for k, off in enumerate(ks):
        idx = _reflect_idx(np.arange(wd) + off, wd)
        np.add.at(out.T, idx, (w[k] * tmp).T)
    return out


def _cell_bounds(n):
    return [(i * n) // 4 for i in range(5)]


def cell_stats_fwd(x):
    h, w = x.shape
    rb, cb = _cell_bounds(h), _cell_bounds(w)
    out = np.empty((4, 4, 2))
    for ci in range(4):
        for cj in range(4):
            blk = x[rb[ci]:rb[ci + 1], cb[cj]:cb[cj + 1]]
            m = blk.mean()
            var = max((blk * blk).mean() - m * m, 0.0)
            out[ci, cj, 0] = m
            out[ci, cj, 1] = np.sqrt(var + EPS_VAR)
    return out


def cell_stats_bwd(x, out, gout):
    h, w = x.shape
    rb, cb = _cell_bounds(h), _cell_bounds(w)
    gx = np.zeros_like(x)
    for ci in range(4):
        for cj in range(4):
            blk = x[rb[ci]:rb[ci + 1], cb[cj]:cb[cj + 1]]
            n = blk.size
            m = out[ci, cj, 0]
            sd = out[ci, cj, 1]
            gm = gout[ci, cj, 0] / n
            gs = gout[ci, cj, 1] / (n * sd)
            gx[rb[ci]:rb[ci + 1], cb[cj]:cb[cj + 1]] += gm + gs * (blk - m)
    return gx


def _seg_d2(qx, qy, ax, ay, bx, by):
    hx, hy = bx - ax, by - ay
    ux, uy = qx - ax, qy - ay
    hh = hx * hx + hy * hy
    t = (ux * hx + uy * hy) / hh if hh >= 1e-30 else np.zeros_like(ux)
    t = np.clip(t, 0.0, 1.0)
    dx = ux - t * hx
    dy = uy - t * hy
    return dx * dx + dy * dy, t


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _tri_block(xy, tris, t, rad, H, W):
    i0, i1, i2 = tris[t]
    pts = xy[[i0, i1, i2]]
    x0 = max(0, int(np.floor(pts[:, 0].min())) - rad)
    x1 = min(W - 1, int(np.ceil(pts[:, 0].max())) + rad)
    y0 = max(0, int(np.floor(pts[:, 1].min())) - rad)
    y1 = min(H - 1, int(np.ceil(pts[:, 1].max())) + rad)
    if x0 > x1 or y0 > y1:
        return None
    qy, qx = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(float)
    return (i0, i1, i2), (slice(y0, y1 + 1), slice(x0, x1 + 1)), qx + 0.5, qy + 0.5


def _pair_geometry(xy, z, tris, t, qx, qy, sigma):
    i0, i1, i2 = tris[t]
    p0, p1, p2 = xy[i0], xy[i1], xy[i2]
    atot = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
    a0 = (p1[0] - qx) * (p2[1] - qy) - (p1[1] - qy) * (p2[0] - qx)
    a1 = (p2[0] - qx) * (p0[1] - qy) - (p2[1] - qy) * (p0[0] - qx)
    a2 = (p0[0] - qx) * (p1[1] - qy) - (p0[1] - qy) * (p1[0] - qx)
    b0, b1, b2 = a0 / atot, a1 / atot, a2 / atot
    inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
    d20, t0 = _seg_d2(qx, qy, p0[0], p0[1], p1[0], p1[1])
    d21, t1 = _seg_d2(qx, qy, p1[0], p1[1], p2[0], p2[1])
    d22, t2 = _seg_d2(qx, qy, p2[0], p2[1], p0[0], p0[1])
    d2 = np.minimum(d20, np.minimum(d21, d22))
    sgn = np.where(inside, 1.0, -1.0)
    cov = _sigmoid(sgn * d2 / sigma)
    keep = inside | (d2 <= CUT_LOGIT * sigma)
    return (atot, (b0, b1, b2), inside, (d20, d21, d22), (t0, t1, t2), d2,
            sgn, cov, keep)


def raster_fwd(xy, z, colors, tris, front, sigma, gamma, z_bg, bg, H, W):
    nt = tris.shape[0]
    K = colors.shape[0]
    rad = int(np.ceil(np.sqrt(CUT_LOGIT * sigma))) + 1

    mref = np.full((H, W), -z_bg / gamma)
    # pass A: exact per-pixel exponent shift over the kept blend candidates
    for t in range(nt):
        if not front[t]:
            continue
        blk = _tri_block(xy, tris, t, rad, H, W)
        if blk is None:
            continue
        (i0, i1, i2), sl, qx, qy = blk
        geo = _pair_geometry(xy, z, tris, t, qx, qy, sigma)
        atot, (b0, b1, b2), _, _, _, _, _, _, keep = geo
        if abs(atot) < EPS_AREA:
            continue
        c0 = np.clip(b0, 0.0, 1.0)
        c1 = np.clip(b1, 0.0, 1.0)
        c2 = np.clip(b2, 0.0, 1.0)
        s = np.maximum(c0 + c1 + c2, 1e-30)
        zbar = (c0 * z[i0] + c1 * z[i1] + c2 * z[i2]) / s
        mcand = np.where(keep, -zbar / gamma, -np.inf)
        np.maximum(mref[sl], mcand, out=mref[sl])

    e_bg = np.exp(-z_bg / gamma - mref)
    den = e_bg.copy()
    num = bg[:, None, None, :] * e_bg[None, :, :, None]
    num = np.ascontiguousarray(num)
    prest = np.ones((H, W))
    minf = np.ones((H, W))
    argmin = np.full((H, W), -1, dtype=np.int64)
    face_id = np.full((H, W), -1, dtype=np.int64)
    depth = np.full((H, W), z_bg)
    bary_out = np.zeros((H, W, 3))

    for t in range(nt):
        i0, i1, i2 = tris[t]
        blk = _tri_block(xy, tris, t, rad, H, W)
        if blk is None:
            continue
        _, sl, qx, qy = blk
        geo = _pair_geometry(xy, z, tris, t, qx, qy, sigma)
        atot, (b0, b1, b2), inside, _, _, _, _, cov, keep = geo
        if abs(atot) < EPS_AREA:
            continue
        covk = np.where(keep, cov, 0.0)
        f = 1.0 - covk
        mb, pb, ab = minf[sl], prest[sl], argmin[sl]
        upd = keep & (f < mb)
        oth = keep & ~upd
        pb[upd] *= mb[upd]
        mb[upd] = f[upd]
        ab[upd] = t
        pb[oth] *= f[oth]
        if front[t]:
            c0 = np.clip(b0, 0.0, 1.0)
            c1 = np.clip(b1, 0.0, 1.0)
            c2 = np.clip(b2, 0.0, 1.0)
            s = c0 + c1 + c2
            s = np.maximum(s, 1e-30)
            c0n, c1n, c2n = c0 / s, c1 / s, c2 / s
            zbar = c0n * z[i0] + c1n * z[i1] + c2n * z[i2]
            wgt = covk * np.exp(-zbar / gamma - mref[sl])
            den[sl] += wgt
            for k in range(K):
                ci = (c0n[..., None] * colors[k, i0] + c1n[..., None] * colors[k, i1]
                      + c2n[..., None] * colors[k, i2])
                num[k][sl] += wgt[..., None] * ci
            sel = inside & (zbar < depth[sl])
            dsl = depth[sl]
            dsl[sel] = zbar[sel]
            fsl = face_id[sl]
            fsl[sel] = t
            bsl = bary_out[sl]
            bsl[sel] = np.stack([b0[sel], b1[sel], b2[sel]], axis=-1)

    out_col = num / den[None, :, :, None]
    sil = 1.0 - prest * minf
    return out_col, sil, mref, den, prest, minf, argmin, face_id, depth, bary_out


def raster_bwd(xy, z, colors, tris, front, sigma, gamma, z_bg, bg,
               mref, den, out_col, prest, minf, argmin, gcol, gsil):
    nt = tris.shape[0]
    K = colors.shape[0]
    nv = xy.shape[0]
    H, W = den.shape
    rad = int(np.ceil(np.sqrt(CUT_LOGIT * sigma))) + 1

    gxy = np.zeros((nv, 2))
    gz = np.zeros(nv)
    gcolors = np.zeros((K, nv, 3))
    gden = -np.einsum("khwc,khwc->hw", gcol, out_col) / den

    for t in range(nt):
        i0, i1, i2 = tris[t]
        blk = _tri_block(xy, tris, t, rad, H, W)
        if blk is None:
            continue
        _, sl, qx, qy = blk
        geo = _pair_geometry(xy, z, tris, t, qx, qy, sigma)
        atot, (b0, b1, b2), inside, d2s, tts, d2, sgn, cov, keep = geo
        if abs(atot) < EPS_AREA:
            continue

        f = 1.0 - cov
        is_min = argmin[sl] == t
        fsafe = np.maximum(f, 1e-300)
        pother = np.where(is_min, prest[sl], prest[sl] * (minf[sl] / fsafe))
        pother = np.where(f > 1e-300, pother, np.where(is_min, prest[sl], 0.0))
        gcov = gsil[sl] * pother

        dbc = None
        if front[t]:
            c0 = np.clip(b0, 0.0, 1.0)
            c1 = np.clip(b1, 0.0, 1.0)
            c2 = np.clip(b2, 0.0, 1.0)
            s = np.maximum(c0 + c1 + c2, 1e-30)
            c0n, c1n, c2n = c0 / s, c1 / s, c2 / s
            zbar = c0n * z[i0] + c1n * z[i1] + c2n * z[i2]
            e = np.exp(-zbar / gamma - mref[sl])
            covk = np.where(keep, cov, 0.0)
            wgt = covk * e
            d = den[sl]
            dw = gden[sl].copy()
            dcn = [np.zeros_like(qx) for _ in range(3)]
            for k in range(K):
                gq = gcol[k][sl] / d[..., None]
                ci = (c0n[..., None] * colors[k, i0] + c1n[..., None] * colors[k, i1]
                      + c2n[..., None] * colors[k, i2])
                dw += np.einsum("...c,...c->...", gq, ci)
                wq = gq * wgt[..., None]
                gcolors[k, i0] += (wq * c0n[..., None]).sum(axis=(0, 1))
                gcolors[k, i1] += (wq * c1n[..., None]).sum(axis=(0, 1))
                gcolors[k, i2] += (wq * c2n[..., None]).sum(axis=(0, 1))
                dcn[0] += wq @ colors[k, i0]
                dcn[1] += wq @ colors[k, i1]
                dcn[2] += wq @ colors[k, i2]
            dw = np.where(keep, dw, 0.0)
            gcov = gcov + dw * e
            dzbar = -dw * wgt / gamma
            gz[i0] += (dzbar * c0n).sum()
            gz[i1] += (dzbar * c1n).sum()
            gz[i2] += (dzbar * c2n).sum()
            dcn[0] += dzbar * z[i0]
            dcn[1] += dzbar * z[i1]
            dcn[2] += dzbar * z[i2]
            dcn = [np.where(keep, x, 0.0) for x in dcn]
            dot = dcn[0] * c0n + dcn[1] * c1n + dcn[2] * c2n
            dc = [(x - dot) / s for x in dcn]
            dbc = [np.where((b > 0.0) & (b < 1.0), g, 0.0)
                   for b, g in zip((b0, b1, b2), dc)]

        gcov = np.where(keep, gcov, 0.0)
        dd2 = gcov * cov * (1.0 - cov) * sgn / sigma

        d20, d21, d22 = d2s
        t0, t1, t2 = tts
        pick0 = (d20 <= d21) & (d20 <= d22)
        pick1 = ~pick0 & (d21 <= d22)
        pick2 = ~pick0 & ~pick1
        pts = xy[[i0, i1, i2]]
        for pick, (ia, ib), tt, (ax, ay, bx, by) in (
                (pick0, (i0, i1), t0, (*pts[0], *pts[1])),
                (pick1, (i1, i2), t1, (*pts[1], *pts[2])),
                (pick2, (i2, i0), t2, (*pts[2], *pts[0]))):
            m = pick & (dd2 != 0.0)
            if not m.any():
                continue
            hx, hy = bx - ax, by - ay
            dfx = (qx - ax) - tt * hx
            dfy = (qy - ay) - tt * hy
            w = dd2 * m
            gxy[ia, 0] += (w * 2.0 * (tt - 1.0) * dfx).sum()
            gxy[ia, 1] += (w * 2.0 * (tt - 1.0) * dfy).sum()
            gxy[ib, 0] += (w * (-2.0 * tt) * dfx).sum()
            gxy[ib, 1] += (w * (-2.0 * tt) * dfy).sum()

        if dbc is not None:
            dAsum = (dbc[0] * b0 + dbc[1] * b1 + dbc[2] * b2) / atot
            dA = [g / atot - dAsum for g in dbc]
            p0, p1, p2 = pts
            # A0 = cross(P1-q, P2-q); A1 = cross(P2-q, P0-q); A2 = cross(P0-q, P1-q)
            for dAv, (ja, jb), (pa, pb) in ((dA[0], (i1, i2), (p1, p2)),
                                            (dA[1], (i2, i0), (p2, p0)),
                                            (dA[2], (i0, i1), (p0, p1))):
                gxy[ja, 0] += (dAv * (pb[1] - qy)).sum()
                gxy[ja, 1] += (dAv * (-(pb[0] - qx))).sum()
                gxy[jb, 0] += (dAv * (-(pa[1] - qy))).sum()
                gxy[jb, 1] += (dAv * (pa[0] - qx)).sum()
    return gxy, gz, gcolors
