"""Per-pixel front-to-back compositing kernels.

Splats arrive already depth-sorted. A ray stops before the splat that would
push its transmittance under T_MIN. Tiles only prune splats whose alpha is
provably below the skip threshold inside the tile, so the result equals a
brute-force traversal of the full sorted list. Parallel loops run over tiles,
and each tile writes its own rows of the gradient buffer, which are then
reduced in a fixed order. That keeps outputs bit-identical for any thread
count.
"""

import math

import numba
import numpy as np
from numba import prange

ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
DEPTH_EPS = 1e-8
T_MIN = 1e-7  # a ray stops once transmittance would fall below this
TILE = 16
# gradient buffer columns: mean x/y, conic a/b/c, opacity, depth, colors...
GCOLS = 7


@numba.njit(cache=True)
def bin_splats(means, cov2d, opac, width, height, tile):
    """CSR tile lists (ptr, idx) of splats in sorted order."""
    n = means.shape[0]
    tw = (width + tile - 1) // tile
    th = (height + tile - 1) // tile
    rect = np.full((n, 4), -1, dtype=np.int64)
    counts = np.zeros(tw * th + 1, dtype=np.int64)
    for i in range(n):
        o = opac[i]
        if o <= ALPHA_MIN:
            continue
        r2 = 2.0 * math.log(255.0 * o)
        hx = math.sqrt(r2 * cov2d[i, 0, 0]) + 1.0
        hy = math.sqrt(r2 * cov2d[i, 1, 1]) + 1.0
        x0 = max(0, int(math.floor(means[i, 0] - hx)))
        x1 = min(width - 1, int(math.ceil(means[i, 0] + hx)))
        y0 = max(0, int(math.floor(means[i, 1] - hy)))
        y1 = min(height - 1, int(math.ceil(means[i, 1] + hy)))
        if x0 > x1 or y0 > y1:
            continue
        rect[i, 0] = x0 // tile
        rect[i, 1] = x1 // tile
        rect[i, 2] = y0 // tile
        rect[i, 3] = y1 // tile
        for ty in range(rect[i, 2], rect[i, 3] + 1):
            for tx in range(rect[i, 0], rect[i, 1] + 1):
                counts[ty * tw + tx + 1] += 1
    ptr = np.cumsum(counts)
    fill = ptr[:-1].copy()
    idx = np.empty(ptr[-1], dtype=np.int64)
    for i in range(n):
        if rect[i, 0] < 0:
            continue
        for ty in range(rect[i, 2], rect[i, 3] + 1):
            for tx in range(rect[i, 0], rect[i, 1] + 1):
                t = ty * tw + tx
                idx[fill[t]] = i
                fill[t] += 1
    return ptr, idx


@numba.njit(cache=True)
def pack_entries(means, conics, opac, idx):
    """Tile-ordered copy of per-splat footprint data, one row per CSR entry:
    mean x/y, conic a/b/c, opacity, and the q beyond which alpha is certainly
    under the skip threshold."""
    P = np.empty((idx.shape[0], 7))
    for k in range(idx.shape[0]):
        s = idx[k]
        o = opac[s]
        P[k, 0] = means[s, 0]
        P[k, 1] = means[s, 1]
        P[k, 2] = conics[s, 0]
        P[k, 3] = conics[s, 1]
        P[k, 4] = conics[s, 2]
        P[k, 5] = o
        P[k, 6] = 2.0 * math.log(255.0 * o) + 1e-6 if o > ALPHA_MIN else -1.0
    return P


@numba.njit(parallel=True, cache=True)
def composite_forward(means, conics, opac, colors, depths, ptr, idx, width, height, tile):
    """Returns color, accumulation, depth, final transmittance and, per pixel,
    the CSR position one past the last contributing entry."""
    nc = colors.shape[1]
    tw = (width + tile - 1) // tile
    ntiles = ptr.shape[0] - 1
    out_color = np.zeros((height, width, nc))
    out_acc = np.zeros((height, width))
    out_depth = np.zeros((height, width))
    out_T = np.ones((height, width))
    out_last = np.zeros((height, width), dtype=np.int64)
    P = pack_entries(means, conics, opac, idx)
    for t in prange(ntiles):
        ty = t // tw
        tx = t - ty * tw
        start = ptr[t]
        stop = ptr[t + 1]
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                T = 1.0
                acc = 0.0
                dsum = 0.0
                last = start
                for k in range(start, stop):
                    dx = px - P[k, 0]
                    dy = py - P[k, 1]
                    q = P[k, 2] * dx * dx + 2.0 * P[k, 3] * dx * dy + P[k, 4] * dy * dy
                    if q > P[k, 6]:
                        continue
                    alpha = P[k, 5] * math.exp(-0.5 * q)
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    if alpha < ALPHA_MIN:
                        continue
                    if T * (1.0 - alpha) < T_MIN:
                        break
                    s = idx[k]
                    w = alpha * T
                    for c in range(nc):
                        out_color[py, px, c] += colors[s, c] * w
                    acc += w
                    dsum += depths[s] * w
                    T *= 1.0 - alpha
                    last = k + 1
                out_acc[py, px] = acc
                out_depth[py, px] = dsum / (acc + DEPTH_EPS)
                out_T[py, px] = T
                out_last[py, px] = last
    return out_color, out_acc, out_depth, out_T, out_last


@numba.njit(parallel=True, cache=True)
def composite_backward(means, conics, opac, colors, depths, ptr, idx, width, height, tile,
                       out_acc, out_depth, out_T, out_last, g_color, g_acc, g_depth):
    """Per-entry gradient buffer aligned with ``idx`` (see GCOLS layout).

    Walks each ray back to front from its final transmittance, recovering the
    transmittance in front of every contributor as T / (1 - alpha).
    """
    nc = colors.shape[1]
    tw = (width + tile - 1) // tile
    ntiles = ptr.shape[0] - 1
    buf = np.zeros((idx.shape[0], GCOLS + nc))
    P = pack_entries(means, conics, opac, idx)
    for t in prange(ntiles):
        ty = t // tw
        tx = t - ty * tw
        start = ptr[t]
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                acc = out_acc[py, px]
                if acc == 0.0:
                    continue
                dsum = out_depth[py, px] * (acc + DEPTH_EPS)
                inv = 1.0 / (acc + DEPTH_EPS)
                gd = g_depth[py, px]
                g_s = gd * inv
                g_a = g_acc[py, px] - gd * dsum * inv * inv
                T = out_T[py, px]
                R = 0.0
                for k in range(out_last[py, px] - 1, start - 1, -1):
                    dx = px - P[k, 0]
                    dy = py - P[k, 1]
                    q = P[k, 2] * dx * dx + 2.0 * P[k, 3] * dx * dy + P[k, 4] * dy * dy
                    if q > P[k, 6]:
                        continue
                    G = math.exp(-0.5 * q)
                    alpha = P[k, 5] * G
                    clamped = alpha > ALPHA_MAX
                    if clamped:
                        alpha = ALPHA_MAX
                    if alpha < ALPHA_MIN:
                        continue
                    s = idx[k]
                    T = T / (1.0 - alpha)
                    w = alpha * T
                    f = g_a + depths[s] * g_s
                    for c in range(nc):
                        f += colors[s, c] * g_color[py, px, c]
                        buf[k, GCOLS + c] += g_color[py, px, c] * w
                    buf[k, 6] += g_s * w
                    g_alpha = T * f - R / (1.0 - alpha)
                    R += f * w
                    if clamped:
                        continue
                    buf[k, 5] += g_alpha * G
                    g_q = -0.5 * g_alpha * P[k, 5] * G
                    buf[k, 2] += g_q * dx * dx
                    buf[k, 3] += g_q * 2.0 * dx * dy
                    buf[k, 4] += g_q * dy * dy
                    buf[k, 0] -= g_q * 2.0 * (P[k, 2] * dx + P[k, 3] * dy)
                    buf[k, 1] -= g_q * 2.0 * (P[k, 3] * dx + P[k, 4] * dy)
    return buf


@numba.njit(cache=True)
def reduce_entries(buf, idx, n):
    out = np.zeros((n, buf.shape[1]))
    for k in range(idx.shape[0]):
        s = idx[k]
        for c in range(buf.shape[1]):
            out[s, c] += buf[k, c]
    return out


def composite_bruteforce(means, conics, opac, colors, depths, width, height):
    """Reference traversal of every splat for every pixel (slow, for tests)."""
    nc = colors.shape[1]
    color = np.zeros((height, width, nc))
    acc = np.zeros((height, width))
    depth = np.zeros((height, width))
    Tf = np.ones((height, width))
    for py in range(height):
        for px in range(width):
            T, a, d = 1.0, 0.0, 0.0
            for s in range(len(opac)):
                dx, dy = px - means[s, 0], py - means[s, 1]
                q = conics[s, 0] * dx * dx + 2 * conics[s, 1] * dx * dy + conics[s, 2] * dy * dy
                alpha = min(ALPHA_MAX, opac[s] * math.exp(-0.5 * q))
                if alpha < ALPHA_MIN:
                    continue
                if T * (1 - alpha) < T_MIN:
                    break
                w = alpha * T
                color[py, px] += colors[s] * w
                a += w
                d += depths[s] * w
                T *= 1 - alpha
            acc[py, px], Tf[py, px] = a, T
            depth[py, px] = d / (a + DEPTH_EPS)
    return color, acc, depth, Tf
