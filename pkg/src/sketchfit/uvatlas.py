"""Bidirectional transport between mesh vertices and the 256x256 UV grid,
displacement-map detail geometry, and UV-space normals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.ndimage import distance_transform_edt

from . import autodiff as ad
from .morphable import FaceBasis, Mesh

GRID = 256
SEAM_EDGE_LIMIT = 0.25  # UV edge longer than this marks an atlas seam triangle


@dataclass
class UvMap:
    grid: object                      # (G, G, C) array or Var
    validity: np.ndarray              # (G, G) in [0,1]
    semantic: str = "scalar"          # position | normal | scalar | color

    @property
    def channels(self):
        return np.shape(ad.value_of(self.grid))[2]

    @property
    def size(self):
        return np.shape(ad.value_of(self.grid))[0]

    def values(self):
        return np.asarray(ad.value_of(self.grid))


def _uv_tables(basis: FaceBasis, grid=GRID):
    """Texel -> (triangle, barycentrics) coverage table plus the sparse
    vertex->texel interpolation operator. Cached on the basis."""
    key = ("uv_tables", grid)
    if key in basis._cache:
        return basis._cache[key]
    uv = basis.uv_coords
    tris = basis.triangles.T
    tri_id = np.full((grid, grid), -1, dtype=np.int64)
    bary = np.zeros((grid, grid, 3))
    overlaps = 0
    seams = 0
    for t, (a, b, c) in enumerate(tris):
        pa, pb, pc = uv[:, a] * grid, uv[:, b] * grid, uv[:, c] * grid
        if max(np.linalg.norm(pa - pb), np.linalg.norm(pb - pc),
               np.linalg.norm(pc - pa)) > SEAM_EDGE_LIMIT * grid:
            seams += 1
            continue
        x0 = max(0, int(np.floor(min(pa[0], pb[0], pc[0]) - 0.5)))
        x1 = min(grid - 1, int(np.ceil(max(pa[0], pb[0], pc[0]) - 0.5)) + 1)
        y0 = max(0, int(np.floor(min(pa[1], pb[1], pc[1]) - 0.5)))
        y1 = min(grid - 1, int(np.ceil(max(pa[1], pb[1], pc[1]) - 0.5)) + 1)
        if x0 > x1 or y0 > y1:
            continue
        qy, qx = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(float)
        qx += 0.5
        qy += 0.5
        atot = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
        if abs(atot) < 1e-12:
            continue
        b0 = ((pb[0] - qx) * (pc[1] - qy) - (pb[1] - qy) * (pc[0] - qx)) / atot
        b1 = ((pc[0] - qx) * (pa[1] - qy) - (pc[1] - qy) * (pa[0] - qx)) / atot
        b2 = ((pa[0] - qx) * (pb[1] - qy) - (pa[1] - qy) * (pb[0] - qx)) / atot
        inside = (b0 >= -1e-9) & (b1 >= -1e-9) & (b2 >= -1e-9)
        if not inside.any():
            continue
        sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        prev = tri_id[sl]
        overlaps += int((inside & (prev >= 0)).sum())
        blk_bary = bary[sl]
        stackb = np.stack([b0, b1, b2], axis=-1)
        blk_bary[inside] = stackb[inside]
        prev[inside] = t
    valid = tri_id >= 0
    # sparse texel <- vertex interpolation operator
    rows = np.repeat(np.flatnonzero(valid.ravel()), 3)
    covered_t = tri_id.ravel()[valid.ravel()]
    cols = tris[covered_t].ravel()
    data = bary.reshape(-1, 3)[valid.ravel()].ravel()
    op = sparse.csr_matrix((data, (rows, cols)),
                           shape=(grid * grid, basis.num_vertices))
    tables = {"tri_id": tri_id, "bary": bary, "valid": valid,
              "validity": valid.astype(float), "op": op,
              "overlaps": overlaps, "seam_triangles": seams, "grid": grid}
    basis._cache[key] = tables
    return tables


def uv_diagnostics(basis: FaceBasis, grid=GRID):
    t = _uv_tables(basis, grid)
    return {"overlaps": t["overlaps"], "seam_triangles": t["seam_triangles"],
            "coverage": float(t["valid"].mean())}


def _csr_apply(op, x):
    xv = np.asarray(ad.value_of(x))
    out = op @ xv
    return ad.custom(out, [x], [lambda g: op.T @ np.asarray(g)])


def attribute_to_uv(basis: FaceBasis, attr, semantic="scalar", grid=GRID) -> UvMap:
    """Barycentric transport of a (C, Nv) per-vertex attribute into UV space."""
    tables = _uv_tables(basis, grid)
    attr_t = ad.transpose(attr)                       # (Nv, C)
    flat = _csr_apply(tables["op"], attr_t)           # (G*G, C)
    c = np.shape(ad.value_of(attr))[0]
    out = ad.reshape(flat, (grid, grid, c))
    return UvMap(out, tables["validity"].copy(), semantic)


def _bilinear_table(uv_coords, validity, grid):
    """Per-vertex 4-corner texel indices and weights; invalid corners snap to
    the nearest valid texel. Returns (csr op (Nv x G*G), fallback count)."""
    valid = validity > 0.5
    if valid.all():
        snap = None
    else:
        _, snap = distance_transform_edt(~valid, return_indices=True)
    x = uv_coords[0] * grid - 0.5
    y = uv_coords[1] * grid - 0.5
    x0 = np.clip(np.floor(x).astype(int), 0, grid - 2)
    y0 = np.clip(np.floor(y).astype(int), 0, grid - 2)
    fx = np.clip(x - x0, 0.0, 1.0)
    fy = np.clip(y - y0, 0.0, 1.0)
    corners = [(y0, x0, (1 - fx) * (1 - fy)), (y0, x0 + 1, fx * (1 - fy)),
               (y0 + 1, x0, (1 - fx) * fy), (y0 + 1, x0 + 1, fx * fy)]
    nv = len(x)
    rows = np.repeat(np.arange(nv), 4)
    cols = np.empty((4, nv), dtype=np.int64)
    weights = np.empty((4, nv))
    fallback = 0
    for i, (cy, cx, w) in enumerate(corners):
        ok = valid[cy, cx]
        if snap is not None and (~ok).any():
            fallback += int((~ok).sum())
            ny, nx = snap[0][cy, cx], snap[1][cy, cx]
            cy = np.where(ok, cy, ny)
            cx = np.where(ok, cx, nx)
        cols[i] = cy * grid + cx
        weights[i] = w
    op = sparse.csr_matrix((weights.T.ravel(), (rows, cols.T.ravel())),
                           shape=(nv, grid * grid))
    return op, fallback


def _vertex_sample_op(basis: FaceBasis, validity, grid):
    tables = _uv_tables(basis, grid)
    if validity is tables["validity"] or np.array_equal(validity > 0.5, tables["valid"]):
        key = ("vertex_sample", grid)
        if key not in basis._cache:
            basis._cache[key] = _bilinear_table(basis.uv_coords,
                                                tables["validity"], grid)
        return basis._cache[key]
    return _bilinear_table(basis.uv_coords, validity, grid)


def uv_to_vertices(uvmap: UvMap, basis: FaceBasis, diagnostics=None):
    """Bilinear sample of a UV map at each vertex's UV coordinate -> (C, Nv)."""
    grid = uvmap.size
    op, fallback = _vertex_sample_op(basis, uvmap.validity, grid)
    if fallback and diagnostics is not None:
        diagnostics["uv_sample_fallbacks"] = fallback
    flat = ad.reshape(uvmap.grid, (grid * grid, uvmap.channels))
    return ad.transpose(_csr_apply(op, flat))


def _neighbor_tables(validity, grid):
    valid = validity > 0.5
    iy, ix = np.mgrid[0:grid, 0:grid]

    def shift_ok(d, axis):
        idx = (iy + d, ix) if axis == 0 else (iy, ix + d)
        idx = (np.clip(idx[0], 0, grid - 1), np.clip(idx[1], 0, grid - 1))
        ok = valid[idx] & valid
        return np.where(ok, idx[0] * grid + idx[1], iy * grid + ix)

    right = shift_ok(+1, 1)
    left = shift_ok(-1, 1)
    down = shift_ok(+1, 0)
    up = shift_ok(-1, 0)
    return left.ravel(), right.ravel(), up.ravel(), down.ravel()


def uv_normals(position_map: UvMap, diagnostics=None) -> UvMap:
    """Unit normals of a UV position map via finite-difference tangents.

    Central differences in the chart interior, one-sided at validity borders;
    texels with degenerate tangents copy the nearest valid normal.
    """
    grid = position_map.size
    left, right, up, down = _neighbor_tables(position_map.validity, grid)
    flat = ad.reshape(position_map.grid, (grid * grid, 3))
    tu = flat[right] - flat[left]
    tv = flat[down] - flat[up]
    n = _cross_rows(tu, tv)
    norms = ad.safe_sqrt(ad.sum(n * n, axis=1, keepdims=True))
    nv = np.asarray(ad.value_of(norms))[:, 0]
    valid = (position_map.validity > 0.5).ravel()
    degen = valid & (nv < 1e-12)
    unit = n / ad.maximum(norms, 1e-12)
    if degen.any():
        if diagnostics is not None:
            diagnostics["degenerate_uv_normals"] = int(degen.sum())
        good = valid & ~degen
        gmask = np.zeros(grid * grid, dtype=bool)
        gmask[good] = True
        _, snap = distance_transform_edt(~gmask.reshape(grid, grid),
                                         return_indices=True)
        src = (snap[0].ravel() * grid + snap[1].ravel())
        unit = ad.where(degen[:, None], unit[src], unit)
    out = ad.reshape(unit, (grid, grid, 3))
    placeholder = np.zeros((grid, grid, 3))
    placeholder[:, :, 2] = 1.0
    vmask = valid.reshape(grid, grid)
    out = ad.where(vmask[:, :, None], out, placeholder)
    return UvMap(out, position_map.validity.copy(), "normal")


def _cross_rows(a, b):
    ax, ay, az = a[:, 0], a[:, 1], a[:, 2]
    bx, by, bz = b[:, 0], b[:, 1], b[:, 2]
    return ad.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx],
                    axis=1)


def apply_displacement(v_uv: UvMap, d_uv, n_uv: UvMap, beta_d) -> UvMap:
    """Detail positions: V' = V + beta_d * D (.) N, texelwise along normals."""
    bd = float(ad.value_of(beta_d)) if not ad.is_var(beta_d) else None
    if bd is not None and bd <= 0:
        raise ValueError("beta_d must be positive")
    d = d_uv.grid if isinstance(d_uv, UvMap) else d_uv
    scaled = ad.multiply(beta_d, d)
    disp = ad.reshape(scaled, (v_uv.size, v_uv.size, 1)) * n_uv.grid
    return UvMap(v_uv.grid + disp, v_uv.validity.copy(), "position")


def detail_pipeline(basis: FaceBasis, mesh: Mesh, disp_grid, beta_d,
                    diagnostics=None):
    """UV-space detail chain: vertex positions -> V_uv, N_uv, displaced V'_uv,
    N'_uv, and detail normals transported back to vertices (unit, (3, Nv))."""
    v_uv = attribute_to_uv(basis, mesh.vertices, "position")
    n_uv = uv_normals(v_uv, diagnostics)
    v2_uv = apply_displacement(v_uv, disp_grid, n_uv, beta_d)
    n2_uv = uv_normals(v2_uv, diagnostics)
    n_vtx = uv_to_vertices(n2_uv, basis, diagnostics)
    norms = ad.safe_sqrt(ad.sum(n_vtx * n_vtx, axis=0, keepdims=True))
    n_unit = n_vtx / ad.maximum(norms, 1e-12)
    return {"v_uv": v_uv, "n_uv": n_uv, "v_detail_uv": v2_uv,
            "n_detail_uv": n2_uv, "detail_normals": n_unit}


def detail_mesh(basis: FaceBasis, mesh: Mesh, disp_grid, beta_d,
                diagnostics=None) -> Mesh:
    """Exported detail mesh: displaced UV positions sampled back per vertex."""
    maps = detail_pipeline(basis, mesh, disp_grid, beta_d, diagnostics)
    verts = uv_to_vertices(maps["v_detail_uv"], basis, diagnostics)
    from .morphable import vertex_normals
    return Mesh(verts, basis.triangles, vertex_normals(verts, basis.triangles))


def image_to_uv(image, basis: FaceBasis, mesh: Mesh, cam, depth=None,
                tol_rel=1e-3, grid=GRID) -> UvMap:
    """Sample a camera image onto the UV chart (forward only, not traced).

    Validity combines chart coverage, in-frame projection, and a z-buffer
    visibility test with tolerance ``tol_rel`` of the depth range.
    """
    from .render import project, rasterize
    img = np.asarray(ad.value_of(image), dtype=float)
    if img.ndim == 2:
        img = img[:, :, None]
    H, W = img.shape[:2]
    verts = np.asarray(ad.value_of(mesh.vertices))
    pos_map = attribute_to_uv(basis, verts, "position", grid)
    pos = pos_map.values().reshape(-1, 3)
    valid = pos_map.validity.ravel() > 0.5

    if depth is None:
        dummy = np.full((3, verts.shape[1]), 0.5)
        depth = rasterize(Mesh(verts, mesh.triangles, mesh.normals), dummy, cam).depth
    depth = np.asarray(ad.value_of(depth))

    z = np.maximum(pos[:, 2], cam.near)
    u = cam.focal * pos[:, 0] / z + cam.principal_point[0]
    v = cam.focal * pos[:, 1] / z + cam.principal_point[1]
    inframe = (u >= 0.5) & (u <= W - 0.5) & (v >= 0.5) & (v <= H - 0.5)

    px = np.clip(np.round(u - 0.5).astype(int), 0, W - 1)
    py = np.clip(np.round(v - 0.5).astype(int), 0, H - 1)
    zrange = max(float(depth.max() - depth.min()), 1e-6)
    visible = pos[:, 2] <= depth[py, px] + tol_rel * zrange

    x = np.clip(u - 0.5, 0.0, W - 1.0)
    y = np.clip(v - 0.5, 0.0, H - 1.0)
    x0 = np.clip(np.floor(x).astype(int), 0, W - 2)
    y0 = np.clip(np.floor(y).astype(int), 0, H - 2)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    sample = ((1 - fx) * (1 - fy) * img[y0, x0]
              + fx * (1 - fy) * img[y0, x0 + 1]
              + (1 - fx) * fy * img[y0 + 1, x0]
              + fx * fy * img[y0 + 1, x0 + 1])

    out_valid = (valid & inframe & visible).astype(float)
    sample[out_valid < 0.5] = 0.0
    c = img.shape[2]
    return UvMap(sample.reshape(grid, grid, c), out_valid.reshape(grid, grid),
                 "color" if c == 3 else "scalar")
