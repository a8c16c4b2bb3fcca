"""Pure-numpy reference implementations of the hot kernels.

These are the fallback lane: identical contracts to the compiled versions
in `_core.pyx`, vectorized where numpy allows.  The splat kernel produces
per-pixel contributor records (pixel, gaussian, alpha, transmittance) in
front-to-back order; everything downstream (image composition, gradients)
is shared numpy code and does not care which lane produced the records.
"""

from __future__ import annotations

import numpy as np


def bilinear_vote(xs, ys, weights, width: int, height: int) -> np.ndarray:
    """Scatter weights into an image with bilinear splitting.

    Out-of-bounds corners are dropped; a sample at an integer position
    lands entirely in that pixel.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    image = np.zeros((height, width), dtype=np.float64)
    if xs.size == 0:
        return image
    ix = np.floor(xs)
    iy = np.floor(ys)
    fx = xs - ix
    fy = ys - iy
    ix = ix.astype(np.int64)
    iy = iy.astype(np.int64)
    for dx, dy, w in (
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ):
        cx = ix + dx
        cy = iy + dy
        inside = (cx >= 0) & (cx < width) & (cy >= 0) & (cy < height)
        np.add.at(image, (cy[inside], cx[inside]), weights[inside] * w[inside])
    return image


def bilinear_vote_backward(xs, ys, weights, grad_image):
    """Adjoint of `bilinear_vote` with respect to sample positions and weights."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    grad_image = np.asarray(grad_image, dtype=np.float64)
    height, width = grad_image.shape
    gx = np.zeros_like(xs)
    gy = np.zeros_like(ys)
    gw = np.zeros_like(weights)
    if xs.size == 0:
        return gx, gy, gw
    ix = np.floor(xs)
    iy = np.floor(ys)
    fx = xs - ix
    fy = ys - iy
    ix = ix.astype(np.int64)
    iy = iy.astype(np.int64)

    def pick(cx, cy):
        inside = (cx >= 0) & (cx < width) & (cy >= 0) & (cy < height)
        vals = np.zeros_like(xs)
        vals[inside] = grad_image[cy[inside], cx[inside]]
        return vals

    g00 = pick(ix, iy)
    g10 = pick(ix + 1, iy)
    g01 = pick(ix, iy + 1)
    g11 = pick(ix + 1, iy + 1)

    gw += g00 * (1.0 - fx) * (1.0 - fy)
    gw += g10 * fx * (1.0 - fy)
    gw += g01 * (1.0 - fx) * fy
    gw += g11 * fx * fy
    gx += weights * ((1.0 - fy) * (g10 - g00) + fy * (g11 - g01))
    gy += weights * ((1.0 - fx) * (g01 - g00) + fx * (g11 - g10))
    return gx, gy, gw


def splat_records(
    order,
    means2d,
    inv_cov,
    opacity,
    bbox,
    width: int,
    height: int,
    alpha_min: float,
    trans_min: float,
    alpha_max: float,
):
    """Front-to-back alpha records for depth-sorted 2-D splats.

    Parameters follow the compiled kernel: `order` lists gaussian indices
    front-to-back, `inv_cov` packs the symmetric inverse 2-D covariance as
    (a, b, c) for [[a, b], [b, c]], `bbox` is the integer footprint
    (x0, x1, y0, y1) with exclusive upper bounds.  Returns flat arrays
    (pixel, gaussian, alpha, transmittance) grouped by pixel and ordered
    front-to-back within each pixel.  Records are dropped once the running
    transmittance falls below `trans_min`.
    """
    order = np.asarray(order, dtype=np.int64)
    means2d = np.asarray(means2d, dtype=np.float64)
    inv_cov = np.asarray(inv_cov, dtype=np.float64)
    opacity = np.asarray(opacity, dtype=np.float64)
    bbox = np.asarray(bbox, dtype=np.int64)

    pix_parts: list[np.ndarray] = []
    g_parts: list[np.ndarray] = []
    a_parts: list[np.ndarray] = []
    for g in order:
        x0, x1, y0, y1 = bbox[g]
        if x1 <= x0 or y1 <= y0:
            continue
        xs = np.arange(x0, x1, dtype=np.float64)
        ys = np.arange(y0, y1, dtype=np.float64)
        dx = xs - means2d[g, 0]
        dy = ys - means2d[g, 1]
        a, b, c = inv_cov[g]
        power = -0.5 * (
            a * dx[None, :] ** 2
            + c * dy[:, None] ** 2
            + 2.0 * b * dy[:, None] * dx[None, :]
        )
        alpha = np.minimum(opacity[g] * np.exp(power), alpha_max)
        keep = alpha >= alpha_min
        if not keep.any():
            continue
        yy, xx = np.nonzero(keep)
        pix_parts.append((yy + y0) * width + (xx + x0))
        g_parts.append(np.full(yy.size, g, dtype=np.int64))
        a_parts.append(alpha[keep])

    if not pix_parts:
        empty_i = np.zeros(0, dtype=np.int64)
        empty_f = np.zeros(0, dtype=np.float64)
        return empty_i, empty_i.copy(), empty_f, empty_f.copy()

    pix = np.concatenate(pix_parts)
    gauss = np.concatenate(g_parts)
    alpha = np.concatenate(a_parts)

    sort_idx = np.argsort(pix, kind="stable")
    pix = pix[sort_idx]
    gauss = gauss[sort_idx]
    alpha = alpha[sort_idx]

    # exclusive per-pixel cumulative sum of log(1 - alpha) -> transmittance
    log_rest = np.log1p(-alpha)
    cs = np.cumsum(log_rest)
    excl = cs - log_rest
    new_seg = np.empty(pix.size, dtype=bool)
    new_seg[0] = True
    new_seg[1:] = pix[1:] != pix[:-1]
    heads = np.flatnonzero(new_seg)
    seg_idx = np.cumsum(new_seg) - 1
    trans = np.exp(excl - excl[heads][seg_idx])

    if trans_min > 0.0:
        keep = trans >= trans_min
        pix, gauss, alpha, trans = pix[keep], gauss[keep], alpha[keep], trans[keep]
    return pix, gauss, alpha, trans


def splat_backward(
    pix,
    gauss,
    alpha,
    trans,
    colors,
    z,
    opacities,
    mean2d,
    inv_cov,
    grad_color_flat,
    grad_depth_acc,
    grad_alpha_img,
    total_color_fg,
    total_depth,
    total_alpha,
    background,
    alpha_max: float,
    width: int,
):
    """Record-level reverse pass of the alpha blending.

    Inputs are the forward records (grouped by pixel, front-to-back), the
    per-Gaussian projected quantities, the incoming image gradients in
    accumulator space, and the forward accumulator totals.  Returns
    per-Gaussian gradients for color, opacity, 2-D mean, packed inverse
    covariance, and camera depth.
    """
    n = len(colors)
    grad_colors = np.zeros((n, 3))
    grad_opacity = np.zeros(n)
    grad_mean2d = np.zeros((n, 2))
    grad_ic = np.zeros((n, 3))
    grad_z = np.zeros(n)
    if len(pix) == 0:
        return grad_colors, grad_opacity, grad_mean2d, grad_ic, grad_z

    w = alpha * trans
    gc_rec = grad_color_flat[pix]
    gd_rec = grad_depth_acc[pix]
    ga_rec = grad_alpha_img[pix]
    col_rec = colors[gauss]
    z_rec = z[gauss]

    np.add.at(grad_colors, gauss, w[:, None] * gc_rec)

    contrib_c = w[:, None] * col_rec
    contrib_d = w * z_rec
    new_seg = np.empty(pix.size, dtype=bool)
    new_seg[0] = True
    new_seg[1:] = pix[1:] != pix[:-1]
    heads = np.flatnonzero(new_seg)
    seg_idx = np.cumsum(new_seg) - 1

    def suffix(totals_flat, contrib):
        cs = np.cumsum(contrib, axis=0)
        base = cs[heads] - contrib[heads]
        incl = cs - base[seg_idx]
        return totals_flat[pix] - incl

    suff_c = suffix(total_color_fg, contrib_c)
    suff_d = suffix(total_depth, contrib_d)
    suff_w = suffix(total_alpha, w)

    trans_end = 1.0 - total_alpha
    one_minus = 1.0 - alpha
    bg = np.asarray(background, dtype=np.float64)

    galpha = np.sum(gc_rec * (col_rec * trans[:, None]
                              - (suff_c + trans_end[pix, None] * bg[None, :]) / one_minus[:, None]),
                    axis=1)
    galpha += gd_rec * (z_rec * trans - suff_d / one_minus)
    galpha += ga_rec * (trans - suff_w / one_minus)
    galpha[alpha >= alpha_max] = 0.0

    opa_rec = opacities[gauss]
    np.add.at(grad_opacity, gauss,
              galpha * np.where(opa_rec > 0, alpha / np.maximum(opa_rec, 1e-30), 0.0))

    gpow = galpha * alpha
    ys, xs = np.divmod(pix, width)
    dx = xs - mean2d[gauss, 0]
    dy = ys - mean2d[gauss, 1]
    ic = inv_cov[gauss]
    md_x = ic[:, 0] * dx + ic[:, 1] * dy
    md_y = ic[:, 1] * dx + ic[:, 2] * dy
    np.add.at(grad_mean2d, gauss, gpow[:, None] * np.stack([md_x, md_y], axis=1))
    np.add.at(grad_ic, gauss,
              np.stack([-0.5 * gpow * dx * dx, -gpow * dx * dy, -0.5 * gpow * dy * dy], axis=1))
    np.add.at(grad_z, gauss, gd_rec * w)
    return grad_colors, grad_opacity, grad_mean2d, grad_ic, grad_z
