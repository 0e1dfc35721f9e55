"""Hot-kernel backend selection.

Set ``SKETCHFIT_BACKEND=numpy`` to force the pure-numpy fallback, or
``numba`` to require the jitted kernels. Unset, numba is used when it
imports cleanly.
"""

import os
import warnings

from . import _impl_numpy

_FORCED = os.environ.get("SKETCHFIT_BACKEND", "").strip().lower()

if _FORCED == "numpy":
    _impl = _impl_numpy
    _name = "numpy"
else:
    try:
        from . import _impl_numba as _impl
        _name = "numba"
    except Exception as exc:  # pragma: no cover - depends on host numba install
        if _FORCED == "numba":
            raise
        warnings.warn(f"numba backend unavailable ({exc}); using numpy fallback")
        _impl = _impl_numpy
        _name = "numpy"

CUT_LOGIT = _impl_numpy.CUT_LOGIT


def backend_name():
    return _name


def get_impl(name=None):
    """Fetch a kernel implementation module by name (for tests/benchmarks)."""
    if name in (None, _name):
        return _impl
    if name == "numpy":
        return _impl_numpy
    if name == "numba":
        from . import _impl_numba
        return _impl_numba
    raise ValueError(f"unknown backend {name!r}")


def warmup():
    """Trigger jit compilation of every kernel on tiny inputs."""
    import numpy as np
    imp = _impl
    x = np.linspace(0.0, 1.0, 64).reshape(8, 8)
    w = gaussian_kernel(1.0)
    g = imp.blur2d_fwd(x, w)
    imp.blur2d_adj(g, w)
    s = imp.cell_stats_fwd(x)
    imp.cell_stats_bwd(x, s, np.ones_like(s))
    xy = np.array([[1.0, 1.0], [6.0, 1.5], [3.0, 6.0]])
    z = np.array([5.0, 5.0, 5.0])
    colors = np.ones((1, 3, 3)) * 0.5
    tris = np.array([[0, 1, 2]], dtype=np.int64)
    front = np.ones(1, dtype=bool)
    bg = np.ones((1, 3))
    out = imp.raster_fwd(xy, z, colors, tris, front, 0.5, 0.1, 6.0, bg, 8, 8)
    imp.raster_bwd(xy, z, colors, tris, front, 0.5, 0.1, 6.0, bg,
                   out[2], out[3], out[0], out[4], out[5], out[6],
                   np.ones((1, 8, 8, 3)), np.ones((8, 8)))


def gaussian_kernel(sigma):
    """Normalized 1-D Gaussian taps, radius ceil(3*sigma)."""
    import numpy as np
    r = int(np.ceil(3.0 * float(sigma)))
    xs = np.arange(-r, r + 1, dtype=float)
    w = np.exp(-0.5 * (xs / float(sigma)) ** 2)
    return w / w.sum()
