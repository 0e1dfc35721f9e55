"""Linear parametric face geometry and albedo, plus a license-free synthetic
basis generator used for testing and the demo pipeline.

Layout conventions: per-vertex arrays are stored (3, Nv); basis matrices are
(3*Nv, K) with flat index c*Nv + v (coordinate-major, matching the C-order
ravel of the (3, Nv) arrays).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

NUM_LANDMARKS = 240
NUM_CONTOUR = 33  # landmark slots 0..32 walk the jaw line

PART_NONE = 0
PART_NAMES = ("left_eye", "right_eye", "left_eyebrow", "right_eyebrow",
              "up_lip", "down_lip", "nose", "skin")
NUM_PARTS = len(PART_NAMES)


@dataclass
class FaceBasis:
    """Linear morphable model: means, deformation bases, topology, UV atlas,
    landmark and part metadata."""

    mean_vertices: np.ndarray        # (3, Nv)
    id_basis: np.ndarray             # (3*Nv, K_id)
    exp_basis: np.ndarray            # (3*Nv, K_exp)
    albedo_mean: np.ndarray          # (3, Nv) in [0,1]
    albedo_basis: np.ndarray         # (3*Nv, K_alb)
    triangles: np.ndarray            # (3, Nt) int
    uv_coords: np.ndarray            # (2, Nv) in [0,1]^2
    landmark_indices: np.ndarray     # (240,) int, distinct
    part_membership: np.ndarray      # (Nv,) uint8, 0 = none, 1..8 = PART_NAMES
    contour_candidates: dict         # landmark slot -> ordered vertex index array
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_vertices(self):
        return self.mean_vertices.shape[1]

    @property
    def num_triangles(self):
        return self.triangles.shape[1]

    @property
    def dims(self):
        return (self.id_basis.shape[1], self.exp_basis.shape[1],
                self.albedo_basis.shape[1])

    def validate(self):
        nv = self.num_vertices
        if self.triangles.min() < 0 or self.triangles.max() >= nv:
            raise ValueError("triangle index out of range")
        if self.uv_coords.min() < 0.0 or self.uv_coords.max() > 1.0:
            raise ValueError("uv coords outside [0,1]^2")
        if len(np.unique(self.landmark_indices)) != NUM_LANDMARKS:
            raise ValueError("landmark indices not distinct")
        if self.part_membership.max() > NUM_PARTS:
            raise ValueError("invalid part label")
        for slot, cand in self.contour_candidates.items():
            if len(cand) == 0:
                raise ValueError(f"empty contour candidate list for slot {slot}")
        return self


@dataclass
class CoeffVector:
    """Every optimizable scalar of the face model and its detail layer."""

    beta_id: np.ndarray              # (K_id,)
    beta_exp: np.ndarray             # (K_exp,)
    beta_alb: np.ndarray             # (K_alb,)
    beta_a: np.ndarray               # (3,) pitch, yaw, roll in radians
    beta_t: np.ndarray               # (3,) translation, model units
    beta_sh: np.ndarray              # (9, 3) spherical-harmonics lighting
    beta_d: float                    # displacement magnitude, > 0
    disp_grid: np.ndarray            # (256, 256) free displacement field

    @classmethod
    def zeros(cls, basis: FaceBasis, grid=256):
        k_id, k_exp, k_alb = basis.dims
        return cls(np.zeros(k_id), np.zeros(k_exp), np.zeros(k_alb),
                   np.zeros(3), np.zeros(3), np.zeros((9, 3)), 1.0,
                   np.zeros((grid, grid)))

    def copy(self):
        return CoeffVector(self.beta_id.copy(), self.beta_exp.copy(),
                           self.beta_alb.copy(), self.beta_a.copy(),
                           self.beta_t.copy(), self.beta_sh.copy(),
                           float(self.beta_d), self.disp_grid.copy())

    def validate(self, basis: FaceBasis):
        k_id, k_exp, k_alb = basis.dims
        for name, arr, k in (("beta_id", self.beta_id, k_id),
                             ("beta_exp", self.beta_exp, k_exp),
                             ("beta_alb", self.beta_alb, k_alb)):
            if np.shape(ad.value_of(arr)) != (k,):
                raise ValueError(
                    f"{name} has shape {np.shape(ad.value_of(arr))}, expected ({k},)")
        if float(ad.value_of(self.beta_d)) <= 0:
            raise ValueError("beta_d must be positive")
        return self


@dataclass
class Mesh:
    vertices: object                 # (3, Nv) array or Var
    triangles: np.ndarray            # (3, Nt)
    normals: object                  # (3, Nv) unit vectors


def rotation_matrix(angles):
    """Rz(roll) @ Ry(yaw) @ Rx(pitch) from (pitch, yaw, roll) radians."""
    p, y, r = angles[0], angles[1], angles[2]
    cp, sp = ad.cos(p), ad.sin(p)
    cy, sy = ad.cos(y), ad.sin(y)
    cr, sr = ad.cos(r), ad.sin(r)
    row0 = ad.stack([cr * cy, cr * sy * sp - sr * cp, cr * sy * cp + sr * sp])
    row1 = ad.stack([sr * cy, sr * sy * sp + cr * cp, sr * sy * cp - cr * sp])
    row2 = ad.stack([-sy, cy * sp, cy * cp])
    return ad.stack([row0, row1, row2])


def _check_coeff_len(name, arr, k):
    got = np.shape(ad.value_of(arr))
    if got != (k,):
        raise ValueError(f"{name} has shape {got}, basis expects ({k},)")


def assemble_geometry(basis: FaceBasis, coeffs: CoeffVector) -> Mesh:
    """Posed coarse mesh: R(angles) @ (mean + B_id b_id + B_exp b_exp) + t."""
    k_id, k_exp, _ = basis.dims
    _check_coeff_len("beta_id", coeffs.beta_id, k_id)
    _check_coeff_len("beta_exp", coeffs.beta_exp, k_exp)
    nv = basis.num_vertices
    shaped = (ad.reshape(basis.id_basis @ coeffs.beta_id, (3, nv))
              + ad.reshape(basis.exp_basis @ coeffs.beta_exp, (3, nv))
              + basis.mean_vertices)
    rot = rotation_matrix(coeffs.beta_a)
    verts = rot @ shaped + ad.reshape(coeffs.beta_t, (3, 1))
    return Mesh(verts, basis.triangles, vertex_normals(verts, basis.triangles))


def assemble_albedo(basis: FaceBasis, coeffs: CoeffVector):
    """Per-vertex albedo, unclamped (clamping happens at render time)."""
    _check_coeff_len("beta_alb", coeffs.beta_alb, basis.dims[2])
    nv = basis.num_vertices
    return basis.albedo_mean + ad.reshape(basis.albedo_basis @ coeffs.beta_alb, (3, nv))


def vertex_normals(vertices, triangles, diagnostics=None):
    """Area-weighted vertex normals, (3, Nv) unit vectors.

    Zero-area faces contribute nothing; a vertex with no non-degenerate
    incident face gets (0, 0, 1) and bumps ``diagnostics['isolated_normals']``.
    """
    nv = np.shape(ad.value_of(vertices))[1]
    i0, i1, i2 = triangles[0], triangles[1], triangles[2]
    vt = ad.transpose(vertices)  # (Nv, 3)
    p0, p1, p2 = vt[i0], vt[i1], vt[i2]
    e1 = p1 - p0
    e2 = p2 - p0
    # cross product; magnitude is twice the face area, giving area weighting
    fx = e1[:, 1] * e2[:, 2] - e1[:, 2] * e2[:, 1]
    fy = e1[:, 2] * e2[:, 0] - e1[:, 0] * e2[:, 2]
    fz = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    fn = ad.stack([fx, fy, fz], axis=1)  # (Nt, 3)
    acc = _scatter_rows(fn, i0, nv) + _scatter_rows(fn, i1, nv) + _scatter_rows(fn, i2, nv)
    norms = ad.safe_sqrt(ad.sum(acc * acc, axis=1, keepdims=True))
    bad = ad.value_of(norms)[:, 0] < 1e-12
    if bad.any():
        if diagnostics is not None:
            diagnostics["isolated_normals"] = int(bad.sum())
        fallback = np.zeros((nv, 3))
        fallback[:, 2] = 1.0
        unit = ad.where(bad[:, None], fallback, acc / ad.maximum(norms, 1e-12))
    else:
        unit = acc / norms
    return ad.transpose(unit)


def _scatter_rows(values, idx, n):
    """Sum rows of ``values`` into an (n, 3) array at ``idx``."""
    vals = ad.value_of(values)
    out = np.zeros((n, vals.shape[1]), dtype=float)
    np.add.at(out, idx, vals)
    return ad.custom(out, [values], [lambda g: np.asarray(g)[idx]])


# ---------------------------------------------------------------------------
# synthetic basis
# ---------------------------------------------------------------------------

def _sphere_grid(nv_target):
    """Rings/segments factorization closest to the requested vertex count.

    The body is floored at 242 vertices so the 240 distinct landmark slots
    always fit.
    """
    body = max(242, nv_target - 2)
    best = None
    for segs in range(8, 65):
        rings = max(3, int(round(body / segs)))
        err = abs(rings * segs - body)
        # prefer more rings than segments (better latitude resolution)
        score = (err, abs(rings / segs - 1.6))
        if best is None or score < best[0]:
            best = (score, rings, segs)
    return best[1], best[2]


def _sphere_topology(rings, segs):
    """Polar sphere grid about the face axis (+z): vertex directions and a
    watertight triangulation. Rings are concentric circles in the UV chart."""
    thetas = np.pi * (np.arange(1, rings + 1)) / (rings + 1)
    psis = -np.pi + 2 * np.pi * np.arange(segs) / segs
    t, p = np.meshgrid(thetas, psis, indexing="ij")
    dirs = np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)])
    dirs = dirs.reshape(3, -1)
    top = np.array([[0.0], [0.0], [1.0]])      # face center
    bot = np.array([[0.0], [0.0], [-1.0]])     # back of head
    dirs = np.concatenate([dirs, top, bot], axis=1)
    n_body = rings * segs
    tris = []
    for j in range(segs):
        tris.append((n_body, j, (j + 1) % segs))
    for i in range(rings - 1):
        for j in range(segs):
            a = i * segs + j
            b = i * segs + (j + 1) % segs
            c = (i + 1) * segs + j
            d = (i + 1) * segs + (j + 1) % segs
            tris.append((a, c, b))
            tris.append((b, c, d))
    last = (rings - 1) * segs
    for j in range(segs):
        tris.append((n_body + 1, last + (j + 1) % segs, last + j))
    return dirs, np.asarray(tris, dtype=np.int64).T


def _angdist(dirs, theta_deg, phi_deg):
    """Great-circle distance in degrees between unit dirs and a (theta, phi) target."""
    t = np.deg2rad(theta_deg)
    p = np.deg2rad(phi_deg)
    ref = np.array([np.sin(t) * np.sin(p), np.cos(t), np.sin(t) * np.cos(p)])
    cosang = np.clip(dirs.T @ ref, -1.0, 1.0)
    return np.rad2deg(np.arccos(cosang))


def _landmark_targets():
    """240 canonical (theta, phi) directions; slots 0..32 are the jaw contour."""
    targets = []
    for i in range(NUM_CONTOUR):            # jaw line, ear to ear through chin
        t = i / (NUM_CONTOUR - 1)
        phi = -80.0 + 160.0 * t
        theta = 96.0 + 44.0 * np.sin(np.pi * t)
        targets.append((theta, phi))
    for side in (+1, -1):                   # eyebrows, 16 each
        for i in range(16):
            t = i / 15.0
            targets.append((66.0 + 5.0 * np.sin(np.pi * t), side * (14.0 + 24.0 * t)))
    for side in (+1, -1):                   # eye rings, 20 each
        for i in range(20):
            a = 2 * np.pi * i / 20
            targets.append((80.0 + 6.0 * np.sin(a), side * 25.0 + 7.0 * np.cos(a)))
    for i in range(7):                      # nose bridge
        targets.append((78.0 + 4.5 * i, 0.0))
    for side in (+1, -1):                   # nostril arcs, 10 each
        for i in range(10):
            t = i / 9.0
            targets.append((100.0 + 8.0 * t, side * (4.0 + 9.0 * np.sin(np.pi * t))))
    for i in range(8):                      # nose base row
        targets.append((107.0, -10.5 + 3.0 * i))
    for i in range(25):                     # upper lip arc
        t = i / 24.0
        targets.append((113.0 - 3.0 * np.sin(np.pi * t), -19.0 + 38.0 * t))
    for i in range(25):                     # lower lip arc
        t = i / 24.0
        targets.append((121.0 + 3.0 * np.sin(np.pi * t), -19.0 + 38.0 * t))
    for i in range(50):                     # forehead / cheeks grid
        row, col = divmod(i, 10)
        targets.append((36.0 + 9.0 * row, -54.0 + 12.0 * col))
    assert len(targets) == NUM_LANDMARKS
    return targets


def _assign_landmarks(dirs):
    used = set()
    out = np.empty(NUM_LANDMARKS, dtype=np.int64)
    for slot, (theta, phi) in enumerate(_landmark_targets()):
        d = _angdist(dirs, theta, phi)
        for idx in np.argsort(d):
            if int(idx) not in used:
                used.add(int(idx))
                out[slot] = idx
                break
    return out


def _assign_parts(dirs):
    theta = np.rad2deg(np.arccos(np.clip(dirs[1], -1, 1)))
    phi = np.rad2deg(np.arctan2(dirs[0], dirs[2]))
    labels = np.zeros(dirs.shape[1], dtype=np.uint8)
    order = [
        ("left_eye", lambda: _angdist(dirs, 80, 25) <= 8.5),
        ("right_eye", lambda: _angdist(dirs, 80, -25) <= 8.5),
        ("left_eyebrow", lambda: (theta >= 61) & (theta <= 72) & (phi >= 12) & (phi <= 42)),
        ("right_eyebrow", lambda: (theta >= 61) & (theta <= 72) & (phi <= -12) & (phi >= -42)),
        ("up_lip", lambda: (theta > 108) & (theta <= 118) & (np.abs(phi) <= 20)),
        ("down_lip", lambda: (theta > 118) & (theta <= 129) & (np.abs(phi) <= 20)),
        ("nose", lambda: (theta >= 74) & (theta <= 108) & (np.abs(phi) <= 13)),
        ("skin", lambda: (theta >= 22) & (theta <= 152) & (np.abs(phi) <= 88)),
    ]
    for name, pred in order:
        mask = pred() & (labels == PART_NONE)
        labels[mask] = PART_NAMES.index(name) + 1
    return labels


def _contour_candidates(dirs, landmark_indices):
    """Per contour landmark: the front-arc vertices of its latitude ring
    (constant head-vertical angle), ordered left to right."""
    theta_y = np.rad2deg(np.arccos(np.clip(dirs[1], -1, 1)))
    phi_y = np.rad2deg(np.arctan2(dirs[0], dirs[2]))
    front = np.abs(phi_y) <= 100.0
    cands = {}
    for slot in range(NUM_CONTOUR):
        v = int(landmark_indices[slot])
        band = 3.0
        while True:
            keep = np.flatnonzero(front & (np.abs(theta_y - theta_y[v]) <= band))
            if len(keep) >= 5 or band > 60.0:
                break
            band *= 1.5
        if v not in keep:
            keep = np.append(keep, v)
        cands[slot] = keep[np.argsort(phi_y[keep])]
    return cands


def _poly_features(dirs, degree):
    """Monomials of the direction components up to ``degree``: (Nv, M)."""
    x, y, z = dirs
    feats = []
    for dx in range(degree + 1):
        for dy in range(degree + 1 - dx):
            for dz in range(degree + 1 - dx - dy):
                feats.append((x ** dx) * (y ** dy) * (z ** dz))
    return np.stack(feats, axis=1)


def _smooth_basis(rng, dirs, k, amplitude):
    """k orthonormal low-frequency deformation fields scaled by amplitude."""
    nv = dirs.shape[1]
    degree = 2
    while True:
        m = _poly_features(dirs, degree).shape[1] * 3
        if m >= k + 4:
            break
        degree += 1
    feats = _poly_features(dirs, degree)       # (Nv, M)
    cols = np.zeros((3 * nv, k))
    for j in range(k):
        coeff = rng.standard_normal((3, feats.shape[1]))
        cols[:, j] = (feats @ coeff.T).T.ravel()  # (3, Nv) flattened c-major
    q, _ = np.linalg.qr(cols)
    return q[:, :k] * amplitude


def synthetic_basis(seed: int, nv_target: int = 1002, k_id: int = 8,
                    k_exp: int = 6, k_alb: int = 8) -> FaceBasis:
    """Deterministic head-shaped basis: ellipsoid with nose/brow/chin bulges,
    orthonormal smooth deformation fields, single-chart UV atlas, landmark and
    part metadata."""
    if nv_target < 12:
        raise ValueError("nv_target must be >= 12")
    rng = np.random.default_rng(seed)
    rings, segs = _sphere_grid(nv_target)
    dirs, tris = _sphere_topology(rings, segs)

    bump = (1.0
            + 0.22 * np.exp(-(_angdist(dirs, 96, 0) / 11.0) ** 2)      # nose
            + 0.06 * np.exp(-(_angdist(dirs, 66, 22) / 10.0) ** 2)     # brows
            + 0.06 * np.exp(-(_angdist(dirs, 66, -22) / 10.0) ** 2)
            + 0.08 * np.exp(-(_angdist(dirs, 138, 0) / 10.0) ** 2))    # chin
    axes = np.array([[0.78], [1.0], [0.85]])
    mean_vertices = dirs * bump * axes

    # enforce outward orientation
    v = mean_vertices.T
    t = tris.T
    vol = np.einsum("ij,ij->", np.cross(v[t[:, 1]] - v[t[:, 0]],
                                        v[t[:, 2]] - v[t[:, 0]]), v[t[:, 0]])
    if vol < 0:
        tris = tris[[0, 2, 1], :]

    id_basis = _smooth_basis(rng, dirs, k_id, 0.35)
    exp_basis = _smooth_basis(rng, dirs, k_exp, 0.25)
    # joint re-orthonormalization so identity and expression stay separable
    geo = np.concatenate([id_basis, exp_basis], axis=1)
    q, _ = np.linalg.qr(geo)
    id_basis = q[:, :k_id] * 0.35
    exp_basis = q[:, k_id:k_id + k_exp] * 0.25

    theta = np.rad2deg(np.arccos(np.clip(dirs[1], -1, 1)))
    lips = ((theta > 108) & (theta <= 129)
            & (np.abs(np.rad2deg(np.arctan2(dirs[0], dirs[2]))) <= 20))
    albedo_mean = np.tile(np.array([[0.80], [0.62], [0.52]]), (1, dirs.shape[1]))
    albedo_mean[0, lips] = 0.72
    albedo_mean[1, lips] = 0.38
    albedo_mean[2, lips] = 0.38
    albedo_mean += 0.04 * np.sin(3.0 * dirs)  # mild smooth variation
    albedo_mean = np.clip(albedo_mean, 0.0, 1.0)
    albedo_basis = _smooth_basis(rng, dirs, k_alb, 0.30)

    # azimuthal-equidistant chart about the face axis: an exact polar map of
    # the grid, so UV triangles never overlap away from the back-pole rim
    ang = np.arccos(np.clip(dirs[2], -1.0, 1.0))
    pl = np.sqrt(dirs[0] ** 2 + dirs[1] ** 2)
    px = np.where(pl > 1e-12, dirs[0] / np.maximum(pl, 1e-12), 1.0)
    py = np.where(pl > 1e-12, dirs[1] / np.maximum(pl, 1e-12), 0.0)
    r = 0.498 * ang / np.pi
    uv_coords = np.stack([0.5 + r * px, 0.5 + r * py])

    landmark_indices = _assign_landmarks(dirs)
    parts = _assign_parts(dirs)
    contours = _contour_candidates(dirs, landmark_indices)

    return FaceBasis(mean_vertices, id_basis, exp_basis, albedo_mean,
                     albedo_basis, tris, uv_coords, landmark_indices, parts,
                     contours).validate()
