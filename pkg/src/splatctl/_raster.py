"""Compiled per-pixel compositing kernels.

All kernels consume Gaussians already compacted to the visible subset and
sorted front to back. Tile lists only cull pairs whose alpha is provably
below the contribution floor, so results equal a plain global loop.
``log_floor`` is a per-Gaussian exponent below which alpha is certainly
under the floor, letting far-away pairs skip the exponential; pairs near the
boundary still take the exact alpha test.
"""

import math

import numba
import numpy as np

TILE = 8


@numba.njit(cache=True)
def bin_tiles(means, radii, width, height, tile):
    """Return (tile_offsets, tile_entries) with entries kept in input order."""
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n_tiles = tiles_x * tiles_y
    m = means.shape[0]
    rect = np.empty((m, 4), dtype=np.int64)
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    for g in range(m):
        r = radii[g]
        if r < 0.0:
            rect[g, 0] = 0
            rect[g, 1] = -1
            rect[g, 2] = 0
            rect[g, 3] = -1
            continue
        # pixel centers sit at integer coordinates
        x0 = int(math.ceil(means[g, 0] - r))
        x1 = int(math.floor(means[g, 0] + r))
        y0 = int(math.ceil(means[g, 1] - r))
        y1 = int(math.floor(means[g, 1] + r))
        x0 = max(x0, 0)
        y0 = max(y0, 0)
        x1 = min(x1, width - 1)
        y1 = min(y1, height - 1)
        if x1 < x0 or y1 < y0:
            rect[g, 0] = 0
            rect[g, 1] = -1
            rect[g, 2] = 0
            rect[g, 3] = -1
            continue
        tx0 = x0 // tile
        tx1 = x1 // tile
        ty0 = y0 // tile
        ty1 = y1 // tile
        rect[g, 0] = tx0
        rect[g, 1] = tx1
        rect[g, 2] = ty0
        rect[g, 3] = ty1
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                counts[ty * tiles_x + tx + 1] += 1
    for i in range(n_tiles):
        counts[i + 1] += counts[i]
    entries = np.empty(counts[n_tiles], dtype=np.int64)
    fill = counts[:n_tiles].copy()
    for g in range(m):
        for ty in range(rect[g, 2], rect[g, 3] + 1):
            for tx in range(rect[g, 0], rect[g, 1] + 1):
                t = ty * tiles_x + tx
                entries[fill[t]] = g
                fill[t] += 1
    return counts, entries


@numba.njit(cache=True)
def composite_forward(
    means, conics, opacities, log_floor, colors, offsets, entries, width, height, tile,
    alpha_min, alpha_max, t_min,
):
    image = np.zeros((height, width, 3))
    final_t = np.ones((height, width))
    n_contrib = np.zeros((height, width), dtype=np.int64)
    tiles_x = (width + tile - 1) // tile
    for py in range(height):
        for px in range(width):
            t_idx = (py // tile) * tiles_x + (px // tile)
            start = offsets[t_idx]
            end = offsets[t_idx + 1]
            trans = 1.0
            r = 0.0
            gch = 0.0
            b = 0.0
            last = 0
            for k in range(start, end):
                g = entries[k]
                dx = px - means[g, 0]
                dy = py - means[g, 1]
                power = -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy) - conics[g, 1] * dx * dy
                if power < log_floor[g]:
                    continue
                alpha = opacities[g] * math.exp(power)
                if alpha > alpha_max:
                    alpha = alpha_max
                if alpha < alpha_min:
                    continue
                test_t = trans * (1.0 - alpha)
                if test_t < t_min:
                    break
                w = alpha * trans
                r += colors[g, 0] * w
                gch += colors[g, 1] * w
                b += colors[g, 2] * w
                trans = test_t
                last = k - start + 1
            image[py, px, 0] = r
            image[py, px, 1] = gch
            image[py, px, 2] = b
            final_t[py, px] = trans
            n_contrib[py, px] = last
    return image, final_t, n_contrib


@numba.njit(cache=True)
def composite_backward(
    means, conics, opacities, log_floor, colors, offsets, entries, width, height, tile,
    alpha_min, alpha_max, final_t, n_contrib, d_image,
):
    m = means.shape[0]
    d_means = np.zeros((m, 2))
    d_conics = np.zeros((m, 3))
    d_opac = np.zeros(m)
    d_colors = np.zeros((m, 3))
    tiles_x = (width + tile - 1) // tile
    for py in range(height):
        for px in range(width):
            t_idx = (py // tile) * tiles_x + (px // tile)
            start = offsets[t_idx]
            trans = final_t[py, px]
            dr = d_image[py, px, 0]
            dgc = d_image[py, px, 1]
            db = d_image[py, px, 2]
            # color composited behind the current Gaussian
            acc_r = 0.0
            acc_g = 0.0
            acc_b = 0.0
            last_alpha = 0.0
            last_r = 0.0
            last_g = 0.0
            last_b = 0.0
            for k in range(start + n_contrib[py, px] - 1, start - 1, -1):
                g = entries[k]
                dx = px - means[g, 0]
                dy = py - means[g, 1]
                power = -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy) - conics[g, 1] * dx * dy
                if power < log_floor[g]:
                    continue
                gauss = math.exp(power)
                raw_alpha = opacities[g] * gauss
                alpha = raw_alpha
                if alpha > alpha_max:
                    alpha = alpha_max
                if alpha < alpha_min:
                    continue
                trans = trans / (1.0 - alpha)
                w = alpha * trans
                d_colors[g, 0] += w * dr
                d_colors[g, 1] += w * dgc
                d_colors[g, 2] += w * db
                acc_r = last_alpha * last_r + (1.0 - last_alpha) * acc_r
                acc_g = last_alpha * last_g + (1.0 - last_alpha) * acc_g
                acc_b = last_alpha * last_b + (1.0 - last_alpha) * acc_b
                last_alpha = alpha
                last_r = colors[g, 0]
                last_g = colors[g, 1]
                last_b = colors[g, 2]
                d_alpha = trans * (
                    (colors[g, 0] - acc_r) * dr
                    + (colors[g, 1] - acc_g) * dgc
                    + (colors[g, 2] - acc_b) * db
                )
                if raw_alpha > alpha_max:
                    continue
                d_opac[g] += gauss * d_alpha
                d_power = opacities[g] * gauss * d_alpha
                d_conics[g, 0] += -0.5 * dx * dx * d_power
                d_conics[g, 1] += -dx * dy * d_power
                d_conics[g, 2] += -0.5 * dy * dy * d_power
                d_dx = -(conics[g, 0] * dx + conics[g, 1] * dy) * d_power
                d_dy = -(conics[g, 2] * dy + conics[g, 1] * dx) * d_power
                d_means[g, 0] -= d_dx
                d_means[g, 1] -= d_dy
    return d_means, d_conics, d_opac, d_colors
