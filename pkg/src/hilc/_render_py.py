"""Pure-python rasterizer, the fallback when the compiled kernel is absent.

Must stay numerically identical to ``_render.pyx``: both evaluate the same
float64 expressions per pixel, so outputs are byte-equal.
"""

import numpy as np

KIND_RECT = 0.0
KIND_CIRCLE = 1.0


def render_shapes(height, width, origin_x, origin_y, scale, shapes, background):
    """Rasterize an ordered shape list into an RGB uint8 image.

    shapes: float64 array (K, 8): [kind, p0, p1, p2, p3, r, g, b].
      kind 0 (rect):   p = x0, y0, x1, y1 (world coords, half-open)
      kind 1 (circle): p = cx, cy, radius, unused
    origin is the world coordinate of the bottom-left image corner; scale is
    world units per pixel. y points up in world, down in image rows.
    """
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:, :] = np.asarray(background, dtype=np.uint8)
    wx = origin_x + (np.arange(width, dtype=np.float64) + 0.5) * scale
    wy = origin_y + (height - 1 - np.arange(height, dtype=np.float64) + 0.5) * scale
    for k in range(shapes.shape[0]):
        kind = shapes[k, 0]
        color = shapes[k, 5:8].astype(np.uint8)
        if kind == KIND_RECT:
            x0, y0, x1, y1 = shapes[k, 1:5]
            mask = (
                (wx[None, :] >= x0)
                & (wx[None, :] < x1)
                & (wy[:, None] >= y0)
                & (wy[:, None] < y1)
            )
        else:
            cx, cy, rad = shapes[k, 1:4]
            mask = (wx[None, :] - cx) ** 2 + (wy[:, None] - cy) ** 2 <= rad * rad
        img[mask] = color
    return img
