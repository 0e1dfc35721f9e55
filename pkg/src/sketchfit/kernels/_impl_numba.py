"""Numba-jitted hot kernels. Mirrors _impl_numpy semantics exactly."""

import numpy as np
from numba import njit

# dropped soft-coverage below sigmoid(-CUT_LOGIT); bounds the dilation radius
CUT_LOGIT = 20.7
EPS_AREA = 1e-12
EPS_VAR = 1e-12


@njit(cache=True)
def _reflect(i, n):
    # numpy 'reflect' (no edge repeat): -1 -> 1, n -> n-2
    while i < 0 or i >= n:
        if i < 0:
            i = -i
        if i >= n:
            i = 2 * n - 2 - i
    return i


@njit(cache=True)
def blur2d_fwd(x, w):
    h, wd = x.shape
    r = (w.shape[0] - 1) // 2
    tmp = np.empty_like(x)
    out = np.empty_like(x)
    for i in range(h):            # along axis 1 (rows)
        for j in range(wd):
            acc = 0.0
            for k in range(w.shape[0]):
                acc += w[k] * x[i, _reflect(j + k - r, wd)]
            tmp[i, j] = acc
    for i in range(h):            # along axis 0 (cols)
        for j in range(wd):
            acc = 0.0
            for k in range(w.shape[0]):
                acc += w[k] * tmp[_reflect(i + k - r, h), j]
            out[i, j] = acc
    return out


@njit(cache=True)
def blur2d_adj(g, w):
    h, wd = g.shape
    r = (w.shape[0] - 1) // 2
    tmp = np.zeros_like(g)
    out = np.zeros_like(g)
    # adjoint of axis-0 pass, then adjoint of axis-1 pass (k outer to match
    # the vectorized fallback's accumulation order)
    for k in range(w.shape[0]):
        for i in range(h):
            for j in range(wd):
                tmp[_reflect(i + k - r, h), j] += w[k] * g[i, j]
    for k in range(w.shape[0]):
        for i in range(h):
            for j in range(wd):
                out[i, _reflect(j + k - r, wd)] += w[k] * tmp[i, j]
    return out


@njit(cache=True)
def cell_stats_fwd(x):
    h, w = x.shape
    out = np.empty((4, 4, 2))
    for ci in range(4):
        r0 = (ci * h) // 4
        r1 = ((ci + 1) * h) // 4
        for cj in range(4):
            c0 = (cj * w) // 4
            c1 = ((cj + 1) * w) // 4
            n = (r1 - r0) * (c1 - c0)
            s1 = 0.0
            s2 = 0.0
            for i in range(r0, r1):
                for j in range(c0, c1):
                    v = x[i, j]
                    s1 += v
                    s2 += v * v
            m = s1 / n
            var = s2 / n - m * m
            if var < 0.0:
                var = 0.0
            out[ci, cj, 0] = m
            out[ci, cj, 1] = np.sqrt(var + EPS_VAR)
    return out


@njit(cache=True)
def cell_stats_bwd(x, out, gout):
    h, w = x.shape
    gx = np.zeros_like(x)
    for ci in range(4):
        r0 = (ci * h) // 4
        r1 = ((ci + 1) * h) // 4
        for cj in range(4):
            c0 = (cj * w) // 4
            c1 = ((cj + 1) * w) // 4
            n = (r1 - r0) * (c1 - c0)
            m = out[ci, cj, 0]
            sd = out[ci, cj, 1]
            gm = gout[ci, cj, 0] / n
            gs = gout[ci, cj, 1] / (n * sd)
            for i in range(r0, r1):
                for j in range(c0, c1):
                    gx[i, j] += gm + gs * (x[i, j] - m)
    return gx


@njit(cache=True, inline="always")
def _seg_d2(qx, qy, ax, ay, bx, by):
    hx = bx - ax
    hy = by - ay
    ux = qx - ax
    uy = qy - ay
    hh = hx * hx + hy * hy
    if hh < 1e-30:
        t = 0.0
    else:
        t = (ux * hx + uy * hy) / hh
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    dx = ux - t * hx
    dy = uy - t * hy
    return dx * dx + dy * dy, t


@njit(cache=True)
def raster_fwd(xy, z, colors, tris, front, sigma, gamma, z_bg, bg, H, W):
    nt = tris.shape[0]
    K = colors.shape[0]
    rad = int(np.ceil(np.sqrt(CUT_LOGIT * sigma))) + 1

    mref = np.full((H, W), -z_bg / gamma)
    prest = np.ones((H, W))
    minf = np.ones((H, W))
    argmin = np.full((H, W), -1, dtype=np.int64)
    face_id = np.full((H, W), -1, dtype=np.int64)
    depth = np.full((H, W), z_bg)
    bary_out = np.zeros((H, W, 3))

    cut_d2 = CUT_LOGIT * sigma

    # pass A: exact per-pixel exponent shift over the kept blend candidates,
    # so the dominant candidate always gets exp(0) and den stays positive
    for t in range(nt):
        if not front[t]:
            continue
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        p0x, p0y = xy[i0, 0], xy[i0, 1]
        p1x, p1y = xy[i1, 0], xy[i1, 1]
        p2x, p2y = xy[i2, 0], xy[i2, 1]
        atot = (p1x - p0x) * (p2y - p0y) - (p1y - p0y) * (p2x - p0x)
        if abs(atot) < EPS_AREA:
            continue
        x0 = max(0, int(np.floor(min(p0x, min(p1x, p2x)))) - rad)
        x1 = min(W - 1, int(np.ceil(max(p0x, max(p1x, p2x)))) + rad)
        y0 = max(0, int(np.floor(min(p0y, min(p1y, p2y)))) - rad)
        y1 = min(H - 1, int(np.ceil(max(p0y, max(p1y, p2y)))) + rad)
        for py in range(y0, y1 + 1):
            qy = py + 0.5
            for px in range(x0, x1 + 1):
                qx = px + 0.5
                a0 = (p1x - qx) * (p2y - qy) - (p1y - qy) * (p2x - qx)
                a1 = (p2x - qx) * (p0y - qy) - (p2y - qy) * (p0x - qx)
                a2 = (p0x - qx) * (p1y - qy) - (p0y - qy) * (p1x - qx)
                b0 = a0 / atot
                b1 = a1 / atot
                b2 = a2 / atot
                inside = (b0 >= 0.0) and (b1 >= 0.0) and (b2 >= 0.0)
                if not inside:
                    d20, _ = _seg_d2(qx, qy, p0x, p0y, p1x, p1y)
                    d21, _ = _seg_d2(qx, qy, p1x, p1y, p2x, p2y)
                    d22, _ = _seg_d2(qx, qy, p2x, p2y, p0x, p0y)
                    if min(d20, min(d21, d22)) > cut_d2:
                        continue
                c0 = min(max(b0, 0.0), 1.0)
                c1 = min(max(b1, 0.0), 1.0)
                c2 = min(max(b2, 0.0), 1.0)
                s = c0 + c1 + c2
                if s < 1e-30:
                    continue
                zbar = (c0 * z[i0] + c1 * z[i1] + c2 * z[i2]) / s
                mcand = -zbar / gamma
                if mcand > mref[py, px]:
                    mref[py, px] = mcand

    den = np.empty((H, W))
    num = np.zeros((K, H, W, 3))
    for py in range(H):
        for px in range(W):
            e_bg = np.exp(-z_bg / gamma - mref[py, px])
            den[py, px] = e_bg
            for k in range(K):
                for c in range(3):
                    num[k, py, px, c] = bg[k, c] * e_bg

    # pass B: accumulate coverage, blend weights and hard visibility
    for t in range(nt):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        p0x, p0y = xy[i0, 0], xy[i0, 1]
        p1x, p1y = xy[i1, 0], xy[i1, 1]
        p2x, p2y = xy[i2, 0], xy[i2, 1]
        atot = (p1x - p0x) * (p2y - p0y) - (p1y - p0y) * (p2x - p0x)
        if abs(atot) < EPS_AREA:
            continue
        x0 = max(0, int(np.floor(min(p0x, min(p1x, p2x)))) - rad)
        x1 = min(W - 1, int(np.ceil(max(p0x, max(p1x, p2x)))) + rad)
        y0 = max(0, int(np.floor(min(p0y, min(p1y, p2y)))) - rad)
        y1 = min(H - 1, int(np.ceil(max(p0y, max(p1y, p2y)))) + rad)
        is_front = front[t]
        for py in range(y0, y1 + 1):
            qy = py + 0.5
            for px in range(x0, x1 + 1):
                qx = px + 0.5
                a0 = (p1x - qx) * (p2y - qy) - (p1y - qy) * (p2x - qx)
                a1 = (p2x - qx) * (p0y - qy) - (p2y - qy) * (p0x - qx)
                a2 = (p0x - qx) * (p1y - qy) - (p0y - qy) * (p1x - qx)
                b0 = a0 / atot
                b1 = a1 / atot
                b2 = a2 / atot
                inside = (b0 >= 0.0) and (b1 >= 0.0) and (b2 >= 0.0)
                d20, _ = _seg_d2(qx, qy, p0x, p0y, p1x, p1y)
                d21, _ = _seg_d2(qx, qy, p1x, p1y, p2x, p2y)
                d22, _ = _seg_d2(qx, qy, p2x, p2y, p0x, p0y)
                d2 = min(d20, min(d21, d22))
                if (not inside) and d2 > cut_d2:
                    continue
                logit = (d2 if inside else -d2) / sigma
                if logit >= 0.0:
                    cov = 1.0 / (1.0 + np.exp(-logit))
                else:
                    ee = np.exp(logit)
                    cov = ee / (1.0 + ee)
                # silhouette: product of (1 - coverage), minimum factor split off
                f = 1.0 - cov
                if f < minf[py, px]:
                    prest[py, px] *= minf[py, px]
                    minf[py, px] = f
                    argmin[py, px] = t
                else:
                    prest[py, px] *= f
                if not is_front:
                    continue
                # clipped, renormalized barycentrics for blending
                c0 = b0 if b0 > 0.0 else 0.0
                c1 = b1 if b1 > 0.0 else 0.0
                c2 = b2 if b2 > 0.0 else 0.0
                c0 = c0 if c0 < 1.0 else 1.0
                c1 = c1 if c1 < 1.0 else 1.0
                c2 = c2 if c2 < 1.0 else 1.0
                s = c0 + c1 + c2
                if s < 1e-30:
                    continue
                c0 /= s
                c1 /= s
                c2 /= s
                zbar = c0 * z[i0] + c1 * z[i1] + c2 * z[i2]
                wgt = cov * np.exp(-zbar / gamma - mref[py, px])
                den[py, px] += wgt
                for k in range(K):
                    for ch in range(3):
                        ci = (c0 * colors[k, i0, ch] + c1 * colors[k, i1, ch]
                              + c2 * colors[k, i2, ch])
                        num[k, py, px, ch] += wgt * ci
                if inside and zbar < depth[py, px]:
                    depth[py, px] = zbar
                    face_id[py, px] = t
                    bary_out[py, px, 0] = b0
                    bary_out[py, px, 1] = b1
                    bary_out[py, px, 2] = b2

    out_col = np.empty((K, H, W, 3))
    sil = np.empty((H, W))
    for py in range(H):
        for px in range(W):
            d = den[py, px]
            for k in range(K):
                for ch in range(3):
                    out_col[k, py, px, ch] = num[k, py, px, ch] / d
            sil[py, px] = 1.0 - prest[py, px] * minf[py, px]
    return out_col, sil, mref, den, prest, minf, argmin, face_id, depth, bary_out


@njit(cache=True)
def raster_bwd(xy, z, colors, tris, front, sigma, gamma, z_bg, bg,
               mref, den, out_col, prest, minf, argmin, gcol, gsil):
    nt = tris.shape[0]
    K = colors.shape[0]
    nv = xy.shape[0]
    H, W = den.shape
    rad = int(np.ceil(np.sqrt(CUT_LOGIT * sigma))) + 1
    cut_d2 = CUT_LOGIT * sigma

    gxy = np.zeros((nv, 2))
    gz = np.zeros(nv)
    gcolors = np.zeros((K, nv, 3))

    # d total / d den, accumulated over channels (num/den quotient rule)
    gden = np.zeros((H, W))
    for py in range(H):
        for px in range(W):
            acc = 0.0
            for k in range(K):
                for ch in range(3):
                    acc -= gcol[k, py, px, ch] * out_col[k, py, px, ch]
            gden[py, px] = acc / den[py, px]

    for t in range(nt):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        p0x, p0y = xy[i0, 0], xy[i0, 1]
        p1x, p1y = xy[i1, 0], xy[i1, 1]
        p2x, p2y = xy[i2, 0], xy[i2, 1]
        atot = (p1x - p0x) * (p2y - p0y) - (p1y - p0y) * (p2x - p0x)
        if abs(atot) < EPS_AREA:
            continue
        x0 = max(0, int(np.floor(min(p0x, min(p1x, p2x)))) - rad)
        x1 = min(W - 1, int(np.ceil(max(p0x, max(p1x, p2x)))) + rad)
        y0 = max(0, int(np.floor(min(p0y, min(p1y, p2y)))) - rad)
        y1 = min(H - 1, int(np.ceil(max(p0y, max(p1y, p2y)))) + rad)
        is_front = front[t]
        for py in range(y0, y1 + 1):
            qy = py + 0.5
            for px in range(x0, x1 + 1):
                qx = px + 0.5
                a0 = (p1x - qx) * (p2y - qy) - (p1y - qy) * (p2x - qx)
                a1 = (p2x - qx) * (p0y - qy) - (p2y - qy) * (p0x - qx)
                a2 = (p0x - qx) * (p1y - qy) - (p0y - qy) * (p1x - qx)
                b0 = a0 / atot
                b1 = a1 / atot
                b2 = a2 / atot
                inside = (b0 >= 0.0) and (b1 >= 0.0) and (b2 >= 0.0)
                d20, t0 = _seg_d2(qx, qy, p0x, p0y, p1x, p1y)
                d21, t1 = _seg_d2(qx, qy, p1x, p1y, p2x, p2y)
                d22, t2 = _seg_d2(qx, qy, p2x, p2y, p0x, p0y)
                d2 = min(d20, min(d21, d22))
                if (not inside) and d2 > cut_d2:
                    continue
                sgn = 1.0 if inside else -1.0
                logit = sgn * d2 / sigma
                if logit >= 0.0:
                    cov = 1.0 / (1.0 + np.exp(-logit))
                else:
                    ee = np.exp(logit)
                    cov = ee / (1.0 + ee)

                # ---- silhouette term
                f = 1.0 - cov
                if t == argmin[py, px]:
                    pother = prest[py, px]
                elif f > 1e-300:
                    pother = prest[py, px] * (minf[py, px] / f)
                else:
                    pother = 0.0
                gcov = gsil[py, px] * pother

                # ---- color term
                dbc0 = 0.0
                dbc1 = 0.0
                dbc2 = 0.0
                if is_front:
                    c0 = b0 if b0 > 0.0 else 0.0
                    c1 = b1 if b1 > 0.0 else 0.0
                    c2 = b2 if b2 > 0.0 else 0.0
                    c0 = c0 if c0 < 1.0 else 1.0
                    c1 = c1 if c1 < 1.0 else 1.0
                    c2 = c2 if c2 < 1.0 else 1.0
                    s = c0 + c1 + c2
                    if s >= 1e-30:
                        c0n = c0 / s
                        c1n = c1 / s
                        c2n = c2 / s
                        zbar = c0n * z[i0] + c1n * z[i1] + c2n * z[i2]
                        e = np.exp(-zbar / gamma - mref[py, px])
                        wgt = cov * e
                        d = den[py, px]
                        dw = gden[py, px]
                        dcn0 = 0.0
                        dcn1 = 0.0
                        dcn2 = 0.0
                        for k in range(K):
                            for ch in range(3):
                                gq = gcol[k, py, px, ch] / d
                                ci = (c0n * colors[k, i0, ch] + c1n * colors[k, i1, ch]
                                      + c2n * colors[k, i2, ch])
                                dw += gq * ci
                                wq = gq * wgt
                                gcolors[k, i0, ch] += wq * c0n
                                gcolors[k, i1, ch] += wq * c1n
                                gcolors[k, i2, ch] += wq * c2n
                                dcn0 += wq * colors[k, i0, ch]
                                dcn1 += wq * colors[k, i1, ch]
                                dcn2 += wq * colors[k, i2, ch]
                        gcov += dw * e
                        dzbar = -dw * wgt / gamma
                        gz[i0] += dzbar * c0n
                        gz[i1] += dzbar * c1n
                        gz[i2] += dzbar * c2n
                        dcn0 += dzbar * z[i0]
                        dcn1 += dzbar * z[i1]
                        dcn2 += dzbar * z[i2]
                        # renormalization quotient rule
                        dot = dcn0 * c0n + dcn1 * c1n + dcn2 * c2n
                        dc0 = (dcn0 - dot) / s
                        dc1 = (dcn1 - dot) / s
                        dc2 = (dcn2 - dot) / s
                        # clip pass-through
                        dbc0 = dc0 if (b0 > 0.0 and b0 < 1.0) else 0.0
                        dbc1 = dc1 if (b1 > 0.0 and b1 < 1.0) else 0.0
                        dbc2 = dc2 if (b2 > 0.0 and b2 < 1.0) else 0.0

                # ---- coverage -> squared distance -> vertices
                dd2 = gcov * cov * (1.0 - cov) * sgn / sigma
                if dd2 != 0.0:
                    if d20 <= d21 and d20 <= d22:
                        ea_x, ea_y, eb_x, eb_y, ia, ib, tt = p0x, p0y, p1x, p1y, i0, i1, t0
                    elif d21 <= d22:
                        ea_x, ea_y, eb_x, eb_y, ia, ib, tt = p1x, p1y, p2x, p2y, i1, i2, t1
                    else:
                        ea_x, ea_y, eb_x, eb_y, ia, ib, tt = p2x, p2y, p0x, p0y, i2, i0, t2
                    hx = eb_x - ea_x
                    hy = eb_y - ea_y
                    dfx = (qx - ea_x) - tt * hx
                    dfy = (qy - ea_y) - tt * hy
                    gxy[ia, 0] += dd2 * 2.0 * (tt - 1.0) * dfx
                    gxy[ia, 1] += dd2 * 2.0 * (tt - 1.0) * dfy
                    gxy[ib, 0] += dd2 * (-2.0 * tt) * dfx
                    gxy[ib, 1] += dd2 * (-2.0 * tt) * dfy

                # ---- raw barycentrics -> vertices
                if dbc0 != 0.0 or dbc1 != 0.0 or dbc2 != 0.0:
                    # b_v = A_v / atot with atot = A0+A1+A2
                    dA0 = dbc0 / atot - (dbc0 * b0 + dbc1 * b1 + dbc2 * b2) / atot
                    dA1 = dbc1 / atot - (dbc0 * b0 + dbc1 * b1 + dbc2 * b2) / atot
                    dA2 = dbc2 / atot - (dbc0 * b0 + dbc1 * b1 + dbc2 * b2) / atot
                    # A0 = cross(P1-q, P2-q)
                    gxy[i1, 0] += dA0 * (p2y - qy)
                    gxy[i1, 1] += dA0 * (-(p2x - qx))
                    gxy[i2, 0] += dA0 * (-(p1y - qy))
                    gxy[i2, 1] += dA0 * (p1x - qx)
                    # A1 = cross(P2-q, P0-q)
                    gxy[i2, 0] += dA1 * (p0y - qy)
                    gxy[i2, 1] += dA1 * (-(p0x - qx))
                    gxy[i0, 0] += dA1 * (-(p2y - qy))
                    gxy[i0, 1] += dA1 * (p2x - qx)
                    # A2 = cross(P0-q, P1-q)
                    gxy[i0, 0] += dA2 * (p1y - qy)
                    gxy[i0, 1] += dA2 * (-(p1x - qx))
                    gxy[i1, 0] += dA2 * (-(p0y - qy))
                    gxy[i1, 1] += dA2 * (p0x - qx)
    return gxy, gz, gcolors
