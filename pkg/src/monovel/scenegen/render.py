"""Rasterize fronto-parallel vehicle quads over a road/sky background.

Two interchangeable kernels: a numba loop (default) and a vectorized numpy
path (``MONOVEL_NUMBA=0``).  Both use the same arithmetic in the same order and
avoid transcendental functions, so their output is bit-identical.

Quad parameter rows (``QUAD_FIELDS``) are camera-frame quantities.  A quad
stands on the road plane ``y = cam_h`` at depth ``z``, spans
``[x - w/2, x + w/2]`` laterally and ``[cam_h - h, cam_h]`` vertically.

Colors are averaged over an ``ss x ss`` grid of sub-pixel samples so sub-pixel
motion shows up in the intensities.  Vehicle ids and flow are taken at the
pixel center ``(j + 0.5, i + 0.5)``.
"""
import numpy as np

from .._accel import USE_NUMBA, njit

QUAD_FIELDS = (
    "x", "z", "w", "h",           # current-frame pose and size
    "x_prev", "z_prev",           # previous-frame pose
    "r", "g", "b",                # base color
    "period_a", "period_b",       # texture periods along the surface (m)
    "phase",
)
NQ = len(QUAD_FIELDS)
SUPERSAMPLE = 4

SKY_TOP = (0.55, 0.70, 0.90)
SKY_BOTTOM = (0.85, 0.90, 0.95)
ROAD_FAR = (0.50, 0.50, 0.52)
ROAD_NEAR = (0.25, 0.25, 0.27)
SHADOW_FRACTION = 0.12


def _tri(t):
    # triangle wave in [0, 1] with unit period
    f = t - np.floor(t)
    return 2.0 * np.abs(f - 0.5)


@njit(cache=True)
def _tri_scalar(t):
    f = t - np.floor(t)
    return 2.0 * abs(f - 0.5)


@njit(cache=True)
def _shade_numba(u, v, height, fx, fy, cx, cy, cam_h, quads, use_prev, rgb):
    """Color of the scene ray through (u, v); returns the hit quad index or -1."""
    if v < cy:
        t = v / cy
        rgb[0] = SKY_TOP[0] + (SKY_BOTTOM[0] - SKY_TOP[0]) * t
        rgb[1] = SKY_TOP[1] + (SKY_BOTTOM[1] - SKY_TOP[1]) * t
        rgb[2] = SKY_TOP[2] + (SKY_BOTTOM[2] - SKY_TOP[2]) * t
    else:
        t = (v - cy) / (height - cy)
        rgb[0] = ROAD_FAR[0] + (ROAD_NEAR[0] - ROAD_FAR[0]) * t
        rgb[1] = ROAD_FAR[1] + (ROAD_NEAR[1] - ROAD_FAR[1]) * t
        rgb[2] = ROAD_FAR[2] + (ROAD_NEAR[2] - ROAD_FAR[2]) * t
    hit = -1
    # quads arrive sorted far to near; later ones overwrite
    for k in range(quads.shape[0]):
        if use_prev:
            xc = quads[k, 4]
            z = quads[k, 5]
        else:
            xc = quads[k, 0]
            z = quads[k, 1]
        w = quads[k, 2]
        h = quads[k, 3]
        X = (u - cx) * z / fx
        Y = (v - cy) * z / fy
        a = X - (xc - 0.5 * w)
        b = cam_h - Y
        if a < 0.0 or a > w or b < 0.0 or b > h:
            continue
        hit = k
        shade = 0.5 * _tri_scalar(a / quads[k, 9] + quads[k, 11]) + 0.5 * _tri_scalar(b / quads[k, 10])
        if b < SHADOW_FRACTION * h:
            shade = 0.15 * shade
        mod = 0.45 + 0.55 * shade
        rgb[0] = quads[k, 6] * mod
        rgb[1] = quads[k, 7] * mod
        rgb[2] = quads[k, 8] * mod
    return hit


@njit(cache=True)
def _render_numba(height, width, fx, fy, cx, cy, cam_h, quads, use_prev, ss, image, ids, flow):
    rgb = np.empty(3)
    inv = 1.0 / (ss * ss)
    for i in range(height):
        for j in range(width):
            acc0 = 0.0
            acc1 = 0.0
            acc2 = 0.0
            for si in range(ss):
                for sj in range(ss):
                    _shade_numba(j + (sj + 0.5) / ss, i + (si + 0.5) / ss, height,
                                 fx, fy, cx, cy, cam_h, quads, use_prev, rgb)
                    acc0 += rgb[0]
                    acc1 += rgb[1]
                    acc2 += rgb[2]
            image[i, j, 0] = acc0 * inv
            image[i, j, 1] = acc1 * inv
            image[i, j, 2] = acc2 * inv
            u = j + 0.5
            v = i + 0.5
            k = _shade_numba(u, v, height, fx, fy, cx, cy, cam_h, quads, use_prev, rgb)
            ids[i, j] = k
            flow[i, j, 0] = 0.0
            flow[i, j, 1] = 0.0
            if k >= 0:
                # same surface point in the previous frame
                z = quads[k, 1]
                w = quads[k, 2]
                a = (u - cx) * z / fx - (quads[k, 0] - 0.5 * w)
                Y = (v - cy) * z / fy
                Xp = quads[k, 4] - 0.5 * w + a
                zp = quads[k, 5]
                flow[i, j, 0] = u - (fx * Xp / zp + cx)
                flow[i, j, 1] = v - (fy * Y / zp + cy)


def _shade_numpy(U, V, height, fx, fy, cx, cy, cam_h, quads, use_prev):
    sky = V < cy
    t_sky = V / cy
    t_road = (V - cy) / (height - cy)
    rgb = np.stack([np.where(sky,
                             SKY_TOP[c] + (SKY_BOTTOM[c] - SKY_TOP[c]) * t_sky,
                             ROAD_FAR[c] + (ROAD_NEAR[c] - ROAD_FAR[c]) * t_road) for c in range(3)], axis=-1)
    ids = np.full(U.shape, -1, dtype=np.int64)
    for k in range(quads.shape[0]):
        q = quads[k]
        xc, z = (q[4], q[5]) if use_prev else (q[0], q[1])
        w, h = q[2], q[3]
        X = (U - cx) * z / fx
        Y = (V - cy) * z / fy
        a = X - (xc - 0.5 * w)
        b = cam_h - Y
        inside = ~((a < 0.0) | (a > w) | (b < 0.0) | (b > h))
        if not inside.any():
            continue
        a_in, b_in = a[inside], b[inside]
        ids[inside] = k
        shade = 0.5 * _tri(a_in / q[9] + q[11]) + 0.5 * _tri(b_in / q[10])
        shade = np.where(b_in < SHADOW_FRACTION * h, 0.15 * shade, shade)
        mod = 0.45 + 0.55 * shade
        for c in range(3):
            rgb[..., c][inside] = q[6 + c] * mod
    return rgb, ids


def _render_numpy(height, width, fx, fy, cx, cy, cam_h, quads, use_prev, ss, image, ids, flow):
    jj = np.arange(width, dtype=np.float64)
    ii = np.arange(height, dtype=np.float64)
    acc = np.zeros((height, width, 3))
    for si in range(ss):
        for sj in range(ss):
            U = np.broadcast_to((jj + (sj + 0.5) / ss)[None, :], (height, width))
            V = np.broadcast_to((ii + (si + 0.5) / ss)[:, None], (height, width))
            rgb, _ = _shade_numpy(U, V, height, fx, fy, cx, cy, cam_h, quads, use_prev)
            acc += rgb
    image[:] = acc * (1.0 / (ss * ss))
    U = np.broadcast_to((jj + 0.5)[None, :], (height, width))
    V = np.broadcast_to((ii + 0.5)[:, None], (height, width))
    _, center_ids = _shade_numpy(U, V, height, fx, fy, cx, cy, cam_h, quads, use_prev)
    ids[:] = center_ids
    flow[:] = 0.0
    for k in range(quads.shape[0]):
        sel = center_ids == k
        if not sel.any():
            continue
        q = quads[k]
        u, v = U[sel], V[sel]
        a = (u - cx) * q[1] / fx - (q[0] - 0.5 * q[2])
        Y = (v - cy) * q[1] / fy
        Xp = q[4] - 0.5 * q[2] + a
        flow[:, :, 0][sel] = u - (fx * Xp / q[5] + cx)
        flow[:, :, 1][sel] = v - (fy * Y / q[5] + cy)


def render_frame(image_size, cam, quads, use_prev=False, use_numba=None, supersample=SUPERSAMPLE):
    """Render one frame.

    Returns ``(image, ids, flow)``: an ``H x W x 3`` float64 image, an
    ``H x W`` int index into ``quads`` (``-1`` for background), and the
    ``H x W x 2`` flow from the previous to the current frame, indexed at
    current-frame pixels (meaningful only when ``use_prev`` is False).
    """
    height, width = image_size
    quads = np.ascontiguousarray(quads, dtype=np.float64).reshape(-1, NQ)
    image = np.empty((height, width, 3), dtype=np.float64)
    ids = np.empty((height, width), dtype=np.int64)
    flow = np.empty((height, width, 2), dtype=np.float64)
    if use_numba is None:
        use_numba = USE_NUMBA
    kernel = _render_numba if use_numba else _render_numpy
    kernel(height, width, float(cam.f_x), float(cam.f_y), float(cam.c_x), float(cam.c_y),
           float(cam.height_above_ground), quads, bool(use_prev), int(supersample), image, ids, flow)
    return image, ids, flow
