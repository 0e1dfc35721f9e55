import numpy as np
import pytest

from sketchfit import autodiff as ad
from sketchfit.morphable import assemble_geometry, CoeffVector
from sketchfit.uvatlas import (GRID, UvMap, apply_displacement, attribute_to_uv,
                               detail_mesh, detail_pipeline, image_to_uv,
                               uv_diagnostics, uv_normals, uv_to_vertices)
from conftest import centered_coeffs


@pytest.fixture(scope="module")
def mesh(small_basis):
    return assemble_geometry(small_basis, _coeffs(small_basis))


def _coeffs(basis):
    c = CoeffVector.zeros(basis)
    c.beta_t = np.array([0.0, 0.0, 10.0])
    return c


class TestAttributeToUv:
    def test_constant_field(self, small_basis):
        attr = np.ones((1, small_basis.num_vertices))
        uv = attribute_to_uv(small_basis, attr)
        vals = uv.values()[uv.validity > 0.5]
        assert np.allclose(vals, 1.0, atol=1e-12)
        assert np.all(uv.values()[uv.validity <= 0.5] == 0.0)

    def test_linear_in_uv_exact(self, small_basis):
        # barycentric interpolation reproduces functions linear in uv
        u, v = small_basis.uv_coords
        attr = np.stack([2.0 * u - 0.7 * v + 0.3])
        uvmap = attribute_to_uv(small_basis, attr)
        grid = uvmap.size
        iy, ix = np.mgrid[0:grid, 0:grid]
        texel_u = (ix + 0.5) / grid
        texel_v = (iy + 0.5) / grid
        expected = 2.0 * texel_u - 0.7 * texel_v + 0.3
        mask = uvmap.validity > 0.5
        err = np.abs(uvmap.values()[:, :, 0] - expected)[mask]
        assert err.max() <= 1e-6

    def test_coverage_and_diagnostics(self, small_basis):
        d = uv_diagnostics(small_basis)
        assert d["coverage"] > 0.5
        assert d["seam_triangles"] < small_basis.num_triangles * 0.2


class TestRoundTrip:
    def test_smooth_field_round_trip(self, small_basis, mesh):
        verts = np.asarray(ad.value_of(mesh.vertices))
        uvmap = attribute_to_uv(small_basis, verts, "position")
        back = np.asarray(uv_to_vertices(uvmap, small_basis))
        err = np.linalg.norm(back - verts, axis=0)
        # interior vertices: away from the chart rim
        u, v = small_basis.uv_coords
        r = np.hypot(u - 0.5, v - 0.5)
        interior = r < 0.35
        assert err[interior].max() <= 1e-3

    def test_constant_exact(self, small_basis):
        attr = np.full((2, small_basis.num_vertices), 0.6)
        uvmap = attribute_to_uv(small_basis, attr)
        back = np.asarray(uv_to_vertices(uvmap, small_basis))
        assert np.allclose(back, 0.6, atol=1e-9)


class TestUvNormals:
    def test_planar_map(self):
        g = GRID // 4
        iy, ix = np.mgrid[0:g, 0:g]
        pos = np.stack([ix * 0.01, iy * 0.01, np.zeros_like(ix, dtype=float)], axis=-1)
        m = UvMap(pos, np.ones((g, g)), "position")
        n = uv_normals(m)
        assert np.allclose(np.abs(n.values()[:, :, 2]), 1.0, atol=1e-9)

    def test_sphere_map_radial(self, small_basis, mesh):
        verts = np.asarray(ad.value_of(mesh.vertices))
        pos = attribute_to_uv(small_basis, verts, "position")
        n = uv_normals(pos)
        center = verts.mean(axis=1)
        mask = pos.validity > 0.5
        radial = pos.values() - center[None, None, :]
        radial /= np.maximum(np.linalg.norm(radial, axis=2, keepdims=True), 1e-9)
        cosang = np.sum(n.values() * radial, axis=2)[mask]
        # mild head-shape bumps allow a few degrees of deviation off-bump
        assert np.median(np.abs(cosang)) > np.cos(np.deg2rad(5.0))
        # consistent outward orientation
        assert np.mean(cosang > 0) > 0.95

    def test_gradient_matches_fd(self, small_basis, mesh):
        rng = np.random.default_rng(0)
        verts0 = np.asarray(ad.value_of(mesh.vertices))
        probe = rng.standard_normal((GRID, GRID, 3))

        def fn(p):
            pos = attribute_to_uv(small_basis, p["verts"], "position")
            n = uv_normals(pos)
            return ad.sum(n.grid * probe)

        _, grads, _ = ad.value_and_grad(fn, {"verts": verts0})
        d = rng.standard_normal(verts0.shape)
        h = 1e-6
        fp = float(ad.value_of(fn({"verts": verts0 + h * d})))
        fm = float(ad.value_of(fn({"verts": verts0 - h * d})))
        fd = (fp - fm) / (2 * h)
        analytic = float(np.sum(grads["verts"] * d))
        assert abs(analytic - fd) / max(abs(fd), abs(analytic), 1e-9) < 1e-5


class TestDisplacement:
    def test_zero_displacement_identity_bitwise(self, small_basis, mesh):
        pos = attribute_to_uv(small_basis, np.asarray(ad.value_of(mesh.vertices)),
                              "position")
        n = uv_normals(pos)
        disp = np.zeros((GRID, GRID))
        out = apply_displacement(pos, disp, n, 1.0)
        assert np.array_equal(out.values(), pos.values())

    def test_single_texel_offset(self):
        g = 8
        pos = UvMap(np.zeros((g, g, 3)), np.ones((g, g)), "position")
        nmap = UvMap(np.tile(np.array([0.0, 0.0, 1.0]), (g, g, 1)),
                     np.ones((g, g)), "normal")
        d = np.zeros((g, g))
        d[3, 4] = 1.0
        out = apply_displacement(pos, d, nmap, 0.5)
        assert np.allclose(out.values()[3, 4], [0, 0, 0.5])
        out.values()[3, 4] = 0
        assert np.allclose(out.values(), 0.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        g = 16
        pos = rng.standard_normal((g, g, 3))
        nrm = rng.standard_normal((g, g, 3))
        d = rng.standard_normal((g, g))
        bd = 0.7
        out = apply_displacement(UvMap(pos, np.ones((g, g)), "position"), d,
                                 UvMap(nrm, np.ones((g, g)), "normal"), bd)
        expected = np.empty_like(pos)
        for i in range(g):
            for j in range(g):
                for c in range(3):
                    expected[i, j, c] = pos[i, j, c] + bd * d[i, j] * nrm[i, j, c]
        assert np.allclose(out.values(), expected, rtol=1e-15)

    def test_offset_parallel_to_normals(self, small_basis, mesh):
        rng = np.random.default_rng(2)
        pos = attribute_to_uv(small_basis, np.asarray(ad.value_of(mesh.vertices)),
                              "position")
        n = uv_normals(pos)
        d = rng.standard_normal((GRID, GRID))
        out = apply_displacement(pos, d, n, 0.3)
        delta = out.values() - pos.values()
        crossn = np.cross(delta, n.values())
        assert np.abs(crossn).max() <= 1e-10

    def test_detail_normals_equal_when_zero(self, small_basis, mesh):
        maps = detail_pipeline(small_basis, mesh, np.zeros((GRID, GRID)), 1.0)
        n_uv = np.asarray(ad.value_of(maps["n_uv"].grid))
        n2_uv = np.asarray(ad.value_of(maps["n_detail_uv"].grid))
        assert np.array_equal(n_uv, n2_uv)

    def test_detail_mesh_matches_direct_displacement(self, small_basis, mesh):
        rng = np.random.default_rng(3)
        # smooth displacement field sampled onto the grid
        iy, ix = np.mgrid[0:GRID, 0:GRID] / GRID
        disp = 0.02 * np.sin(6 * ix) * np.cos(5 * iy)
        dm = detail_mesh(small_basis, mesh, disp, 1.0)
        verts = np.asarray(ad.value_of(mesh.vertices))
        normals = np.asarray(ad.value_of(mesh.normals))
        u, v = small_basis.uv_coords
        x = np.clip((u * GRID - 0.5), 0, GRID - 1).astype(int)
        y = np.clip((v * GRID - 0.5), 0, GRID - 1).astype(int)
        approx = verts + disp[y, x] * normals
        r = np.hypot(u - 0.5, v - 0.5)
        interior = r < 0.35
        err = np.linalg.norm(np.asarray(ad.value_of(dm.vertices)) - approx, axis=0)
        assert np.median(err[interior]) < 5e-3


class TestImageToUv:
    def test_constant_white_image(self, small_basis, mesh, cam64):
        img = np.ones((64, 64, 3))
        uv = image_to_uv(img, small_basis, mesh, cam64)
        vis = uv.validity > 0.5
        assert vis.sum() > 100
        assert np.allclose(uv.values()[vis], 1.0)

    def test_ramp_is_monotone_along_axis(self, small_basis, mesh, cam64):
        img = np.tile(np.linspace(0, 1, 64)[None, :, None], (64, 1, 3))
        uv = image_to_uv(img, small_basis, mesh, cam64)
        vals = uv.values()[:, :, 0]
        vis = uv.validity > 0.5
        # sample along each uv row: values should track projected x monotonically
        verts = np.asarray(ad.value_of(mesh.vertices))
        pos = attribute_to_uv(small_basis, verts, "position").values()
        row = GRID // 2
        cols = np.flatnonzero(vis[row])
        xs = pos[row, cols, 0]
        order = np.argsort(xs)
        sampled = vals[row, cols][order]
        diffs = np.diff(sampled)
        assert (diffs >= -1e-6).mean() > 0.95

    def test_self_occluded_region_invalid(self, small_basis, mesh, cam64):
        img = np.ones((64, 64, 3))
        uv = image_to_uv(img, small_basis, mesh, cam64)
        verts = np.asarray(ad.value_of(mesh.vertices))
        pos_map = attribute_to_uv(small_basis, verts, "position")
        chart = pos_map.validity > 0.5
        back = pos_map.values()[:, :, 2] > 10.5  # rear half of the head
        assert uv.validity[chart & back].max() == 0.0
