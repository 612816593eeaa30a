# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled rasterizer for the hot render path.

Pixel-for-pixel identical to ``_render_py.render_shapes``; any change here
must be mirrored there (the test suite diffs the two backends).
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def render_shapes(int height, int width, double origin_x, double origin_y,
                  double scale, cnp.float64_t[:, :] shapes, background):
    cdef cnp.ndarray[cnp.uint8_t, ndim=3] img = np.empty(
        (height, width, 3), dtype=np.uint8)
    cdef unsigned char bg_r = background[0]
    cdef unsigned char bg_g = background[1]
    cdef unsigned char bg_b = background[2]
    cdef int r, c, k
    cdef double wx, wy, dx, dy
    cdef double kind, p0, p1, p2, p3
    cdef unsigned char cr, cg, cb
    cdef int nshapes = shapes.shape[0]

    for r in range(height):
        for c in range(width):
            img[r, c, 0] = bg_r
            img[r, c, 1] = bg_g
            img[r, c, 2] = bg_b

    for k in range(nshapes):
        kind = shapes[k, 0]
        p0 = shapes[k, 1]
        p1 = shapes[k, 2]
        p2 = shapes[k, 3]
        p3 = shapes[k, 4]
        cr = <unsigned char> shapes[k, 5]
        cg = <unsigned char> shapes[k, 6]
        cb = <unsigned char> shapes[k, 7]
        for r in range(height):
            wy = origin_y + (height - 1 - r + 0.5) * scale
            for c in range(width):
                wx = origin_x + (c + 0.5) * scale
                if kind == 0.0:
                    if wx >= p0 and wx < p2 and wy >= p1 and wy < p3:
                        img[r, c, 0] = cr
                        img[r, c, 1] = cg
                        img[r, c, 2] = cb
                else:
                    dx = wx - p0
                    dy = wy - p1
                    if dx * dx + dy * dy <= p2 * p2:
                        img[r, c, 0] = cr
                        img[r, c, 1] = cg
                        img[r, c, 2] = cb
    return img
