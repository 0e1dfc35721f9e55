import numpy as np
import pytest

from sketchfit import kernels
from sketchfit.kernels import gaussian_kernel

BACKENDS = ["numpy"]
try:
    kernels.get_impl("numba")
    BACKENDS.append("numba")
except Exception:  # pragma: no cover
    pass


def blur_loop_oracle(x, w):
    """Per-pixel loop mirror of the separable blur (same accumulation order)."""
    h, wd = x.shape
    r = (len(w) - 1) // 2

    def refl(i, n):
        while i < 0 or i >= n:
            if i < 0:
                i = -i
            if i >= n:
                i = 2 * n - 2 - i
        return i

    tmp = np.empty_like(x)
    for i in range(h):
        for j in range(wd):
            acc = 0.0
            for k in range(len(w)):
                acc += w[k] * x[i, refl(j + k - r, wd)]
            tmp[i, j] = acc
    out = np.empty_like(x)
    for i in range(h):
        for j in range(wd):
            acc = 0.0
            for k in range(len(w)):
                acc += w[k] * tmp[refl(i + k - r, h), j]
            out[i, j] = acc
    return out


@pytest.mark.parametrize("backend", BACKENDS)
def test_blur_matches_loop_oracle_bitwise(backend):
    impl = kernels.get_impl(backend)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (13, 17))
    w = gaussian_kernel(1.0)
    assert np.array_equal(impl.blur2d_fwd(x, w), blur_loop_oracle(x, w))


@pytest.mark.parametrize("backend", BACKENDS)
def test_blur_adjoint(backend):
    impl = kernels.get_impl(backend)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((11, 9))
    y = rng.standard_normal((11, 9))
    w = gaussian_kernel(1.5)
    lhs = np.sum(impl.blur2d_fwd(x, w) * y)
    rhs = np.sum(x * impl.blur2d_adj(y, w))
    assert np.isclose(lhs, rhs, rtol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_cell_stats_forward(backend):
    impl = kernels.get_impl(backend)
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, (23, 18))  # not divisible by 4
    out = impl.cell_stats_fwd(x)
    rb = [(i * 23) // 4 for i in range(5)]
    cb = [(i * 18) // 4 for i in range(5)]
    for i in range(4):
        for j in range(4):
            blk = x[rb[i]:rb[i + 1], cb[j]:cb[j + 1]]
            assert np.isclose(out[i, j, 0], blk.mean(), rtol=1e-12)
            assert np.isclose(out[i, j, 1], np.sqrt(blk.var() + 1e-12), rtol=1e-9)


@pytest.mark.parametrize("backend", BACKENDS)
def test_cell_stats_gradient(backend):
    impl = kernels.get_impl(backend)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (12, 12))
    gout = rng.standard_normal((4, 4, 2))
    out = impl.cell_stats_fwd(x)
    gx = impl.cell_stats_bwd(x, out, gout)
    d = rng.standard_normal(x.shape)
    h = 1e-6
    fp = np.sum(impl.cell_stats_fwd(x + h * d) * gout)
    fm = np.sum(impl.cell_stats_fwd(x - h * d) * gout)
    fd = (fp - fm) / (2 * h)
    assert np.isclose(np.sum(gx * d), fd, rtol=1e-6)


def _tiny_scene(seed=0, nv=9, nt=6, K=2, H=12, W=12):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(1.0, W - 1.0, (nv, 2))
    z = rng.uniform(4.0, 6.0, nv)
    tris = np.array([rng.choice(nv, 3, replace=False) for _ in range(nt)], dtype=np.int64)
    front = rng.uniform(size=nt) > 0.3
    colors = rng.uniform(0, 1, (K, nv, 3))
    bg = np.ones((K, 3))
    return xy, z, colors, tris, front, bg


def _run_fwd(impl, xy, z, colors, tris, front, bg, sigma=0.8, gamma=0.2,
             z_bg=8.0, H=12, W=12):
    return impl.raster_fwd(xy, z, colors, tris, front, sigma, gamma, z_bg, bg, H, W)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="numba unavailable")
def test_raster_backends_agree():
    xy, z, colors, tris, front, bg = _tiny_scene()
    outs = [_run_fwd(kernels.get_impl(b), xy, z, colors, tris, front, bg)
            for b in ("numpy", "numba")]
    for a, b in zip(*outs):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-13)
    rng = np.random.default_rng(5)
    gcol = rng.standard_normal(outs[0][0].shape)
    gsil = rng.standard_normal(outs[0][1].shape)
    grads = []
    for bname, out in zip(("numpy", "numba"), outs):
        impl = kernels.get_impl(bname)
        grads.append(impl.raster_bwd(xy, z, colors, tris, front, 0.8, 0.2, 8.0,
                                     bg, out[2], out[3], out[0], out[4], out[5],
                                     out[6], gcol, gsil))
    for a, b in zip(*grads):
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_raster_single_triangle_interior(backend):
    impl = kernels.get_impl(backend)
    H = W = 24
    xy = np.array([[2.0, 2.0], [22.0, 3.0], [12.0, 21.0]])
    z = np.array([5.0, 5.0, 5.0])
    colors = np.full((1, 3, 3), 0.25)
    tris = np.array([[0, 1, 2]], dtype=np.int64)
    front = np.ones(1, dtype=bool)
    bg = np.ones((1, 3))
    out = impl.raster_fwd(xy, z, colors, tris, front, 1e-3, 0.05, 8.0, bg, H, W)
    col, sil = out[0], out[1]
    from scipy.ndimage import binary_erosion
    interior = binary_erosion(out[7] == 0, iterations=2)  # away from the soft edge
    assert interior[12, 12]
    assert np.allclose(col[0][interior], 0.25, atol=1e-3)
    assert np.all(sil[interior] >= 0.999)
    assert np.all(sil >= 0) and np.all(sil <= 1)


@pytest.mark.parametrize("backend", BACKENDS)
def test_raster_depth_ordering(backend):
    # nearer triangle dominates the blend as gamma -> small
    impl = kernels.get_impl(backend)
    H = W = 16
    xy = np.array([[2.0, 2.0], [14.0, 2.0], [8.0, 14.0],
                   [2.0, 2.5], [14.0, 2.5], [8.0, 14.5]])
    z = np.array([4.0, 4.0, 4.0, 6.0, 6.0, 6.0])
    tris = np.array([[0, 1, 2], [3, 4, 5]], dtype=np.int64)
    front = np.ones(2, dtype=bool)
    colors = np.zeros((1, 6, 3))
    colors[0, :3] = 0.9   # near triangle bright
    colors[0, 3:] = 0.1   # far triangle dark
    bg = np.ones((1, 3))
    out = impl.raster_fwd(xy, z, colors, tris, front, 0.5, 0.01, 8.0, bg, H, W)
    assert abs(out[0][0, 8, 8, 0] - 0.9) < 1e-3
    assert out[7][8, 8] == 0 and np.isclose(out[8][8, 8], 4.0, atol=0.1)


@pytest.mark.parametrize("backend", BACKENDS)
def test_raster_silhouette_monotone_in_triangles(backend):
    impl = kernels.get_impl(backend)
    xy, z, colors, tris, front, bg = _tiny_scene(seed=7)
    full = _run_fwd(impl, xy, z, colors, tris, front, bg)[1]
    sub = _run_fwd(impl, xy, z, colors, tris[:-1], front[:-1], bg)[1]
    assert np.all(full >= sub - 1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_raster_gradients_match_fd(backend):
    impl = kernels.get_impl(backend)
    xy, z, colors, tris, front, bg = _tiny_scene(seed=11)
    sigma, gamma, z_bg, H, W = 0.8, 0.3, 8.0, 12, 12
    rng = np.random.default_rng(13)
    out = _run_fwd(impl, xy, z, colors, tris, front, bg, sigma, gamma, z_bg, H, W)
    gcol = rng.standard_normal(out[0].shape)
    gsil = rng.standard_normal(out[1].shape)

    def scalar(xy_, z_, colors_):
        o = impl.raster_fwd(xy_, z_, colors_, tris, front, sigma, gamma, z_bg, bg, H, W)
        return np.sum(o[0] * gcol) + np.sum(o[1] * gsil)

    gxy, gz, gcolors = impl.raster_bwd(
        xy, z, colors, tris, front, sigma, gamma, z_bg, bg,
        out[2], out[3], out[0], out[4], out[5], out[6], gcol, gsil)

    h = 1e-6
    for name, arr, grad in (("xy", xy, gxy), ("z", z, gz), ("colors", colors, gcolors)):
        d = rng.standard_normal(arr.shape)
        args_p = {"xy": xy.copy(), "z": z.copy(), "colors": colors.copy()}
        args_m = {"xy": xy.copy(), "z": z.copy(), "colors": colors.copy()}
        args_p[name] = args_p[name] + h * d
        args_m[name] = args_m[name] - h * d
        fd = (scalar(args_p["xy"], args_p["z"], args_p["colors"])
              - scalar(args_m["xy"], args_m["z"], args_m["colors"])) / (2 * h)
        analytic = np.sum(grad * d)
        denom = max(abs(fd), abs(analytic), 1e-9)
        assert abs(analytic - fd) / denom < 2e-4, (name, analytic, fd)
