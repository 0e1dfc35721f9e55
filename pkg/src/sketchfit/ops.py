"""Differentiable image operations shared across modules.

Each op accepts plain ndarrays or traced Vars; heavy lifting goes through the
selected kernel backend with hand-written adjoints.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import kernels


def gaussian_blur(img, sigma):
    """Separable Gaussian blur with reflect boundary, radius ceil(3*sigma)."""
    w = kernels.gaussian_kernel(sigma)
    impl = kernels.get_impl()
    x = ad.value_of(img)
    if min(x.shape) <= (len(w) - 1) // 2:
        raise ValueError(f"image {x.shape} too small for blur radius {(len(w)-1)//2}")
    out = impl.blur2d_fwd(np.asarray(x, dtype=float), w)
    return ad.custom(out, [img], [lambda g: impl.blur2d_adj(np.asarray(g), w)])


def cell_mean_std(img):
    """Per-cell (mean, std) over a fixed 4x4 spatial grid -> [4,4,2]."""
    impl = kernels.get_impl()
    x = np.asarray(ad.value_of(img), dtype=float)
    out = impl.cell_stats_fwd(x)
    return ad.custom(out, [img],
                     [lambda g: impl.cell_stats_bwd(x, out, np.asarray(g))])


def luminance(rgb):
    """Rec.601 luma of an RGB image in [0,1]."""
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def central_gradients(img):
    """Central-difference image gradients with edge replication: (gx, gy)."""
    p = ad.pad_edge(img, 1)
    h = ad.value_of(img).shape[0]
    w = ad.value_of(img).shape[1]
    gx = 0.5 * (p[1:h + 1, 2:w + 2] - p[1:h + 1, 0:w])
    gy = 0.5 * (p[2:h + 2, 1:w + 1] - p[0:h, 1:w + 1])
    return gx, gy


def gradient_magnitude(img):
    gx, gy = central_gradients(img)
    return ad.safe_sqrt(gx * gx + gy * gy)


def downsample2(img):
    """Stride-2 decimation."""
    return img[::2, ::2]


def cosine_distance(a, b, flags=None):
    """1 - cosine similarity; zero-norm vectors count as fully orthogonal.

    ``flags`` (a dict) gets ``zero_feature`` set when the convention fires.
    """
    na = ad.l2norm(a)
    nb = ad.l2norm(b)
    if float(ad.value_of(na)) < 1e-20 or float(ad.value_of(nb)) < 1e-20:
        if flags is not None:
            flags["zero_feature"] = flags.get("zero_feature", 0) + 1
        return (a * 0.0).sum() + (b * 0.0).sum() + 1.0
    return 1.0 - ad.sum(a * b) / (na * nb)
