"""Backend selection for the rasterizer.

Prefers the compiled extension; falls back to the numpy implementation when
the extension was not built. Both produce byte-identical images.
"""

import numpy as np

try:
    from hilc import _render as _backend

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on build environment
    from hilc import _render_py as _backend

    BACKEND = "python"


def render_shapes(height, width, origin_x, origin_y, scale, shapes, background):
    shapes = np.ascontiguousarray(shapes, dtype=np.float64)
    if shapes.ndim != 2 or (shapes.size and shapes.shape[1] != 8):
        raise ValueError(f"shapes must be (K, 8), got {shapes.shape}")
    if shapes.size == 0:
        shapes = shapes.reshape(0, 8)
    return _backend.render_shapes(
        height, width, origin_x, origin_y, scale, shapes, tuple(background)
    )
