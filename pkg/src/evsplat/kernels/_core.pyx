# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: bilinear event voting and splat record
construction / backward.  Contracts match `_ref.py`; the lane-parity
tests compare both implementations on random instances."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, floor

cnp.import_array()


def bilinear_vote(xs, ys, weights, int width, int height):
    cdef double[::1] x = np.ascontiguousarray(xs, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(ys, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    out = np.zeros((height, width), dtype=np.float64)
    cdef double[:, ::1] img = out
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double fx, fy, wi
    cdef long ix, iy
    for i in range(n):
        ix = <long>floor(x[i])
        iy = <long>floor(y[i])
        fx = x[i] - ix
        fy = y[i] - iy
        wi = w[i]
        if 0 <= ix < width and 0 <= iy < height:
            img[iy, ix] += wi * (1.0 - fx) * (1.0 - fy)
        if 0 <= ix + 1 < width and 0 <= iy < height:
            img[iy, ix + 1] += wi * fx * (1.0 - fy)
        if 0 <= ix < width and 0 <= iy + 1 < height:
            img[iy + 1, ix] += wi * (1.0 - fx) * fy
        if 0 <= ix + 1 < width and 0 <= iy + 1 < height:
            img[iy + 1, ix + 1] += wi * fx * fy
    return out


def bilinear_vote_backward(xs, ys, weights, grad_image):
    cdef double[::1] x = np.ascontiguousarray(xs, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(ys, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(grad_image, dtype=np.float64)
    cdef int height = g.shape[0]
    cdef int width = g.shape[1]
    cdef Py_ssize_t i, n = x.shape[0]
    gx_out = np.zeros(n, dtype=np.float64)
    gy_out = np.zeros(n, dtype=np.float64)
    gw_out = np.zeros(n, dtype=np.float64)
    cdef double[::1] gx = gx_out
    cdef double[::1] gy = gy_out
    cdef double[::1] gw = gw_out
    cdef double fx, fy, g00, g10, g01, g11
    cdef long ix, iy
    for i in range(n):
        ix = <long>floor(x[i])
        iy = <long>floor(y[i])
        fx = x[i] - ix
        fy = y[i] - iy
        g00 = g[iy, ix] if (0 <= ix < width and 0 <= iy < height) else 0.0
        g10 = g[iy, ix + 1] if (0 <= ix + 1 < width and 0 <= iy < height) else 0.0
        g01 = g[iy + 1, ix] if (0 <= ix < width and 0 <= iy + 1 < height) else 0.0
        g11 = g[iy + 1, ix + 1] if (0 <= ix + 1 < width and 0 <= iy + 1 < height) else 0.0
        gw[i] = (g00 * (1.0 - fx) * (1.0 - fy) + g10 * fx * (1.0 - fy)
                 + g01 * (1.0 - fx) * fy + g11 * fx * fy)
        gx[i] = w[i] * ((1.0 - fy) * (g10 - g00) + fy * (g11 - g01))
        gy[i] = w[i] * ((1.0 - fx) * (g01 - g00) + fx * (g11 - g10))
    return gx_out, gy_out, gw_out


def splat_records(order, means2d, inv_cov, opacity, bbox, int width, int height,
                  double alpha_min, double trans_min, double alpha_max):
    cdef long[::1] order_v = np.ascontiguousarray(order, dtype=np.int64)
    cdef double[:, ::1] mu = np.ascontiguousarray(means2d, dtype=np.float64)
    cdef double[:, ::1] ic = np.ascontiguousarray(inv_cov, dtype=np.float64)
    cdef double[::1] opa = np.ascontiguousarray(opacity, dtype=np.float64)
    cdef long[:, ::1] bb = np.ascontiguousarray(bbox, dtype=np.int64)

    cdef Py_ssize_t oi, n_order = order_v.shape[0]
    cdef long g
    cdef Py_ssize_t cap = 0
    for oi in range(n_order):
        g = order_v[oi]
        cap += max(bb[g, 1] - bb[g, 0], 0) * max(bb[g, 3] - bb[g, 2], 0)

    tmp_pix_arr = np.empty(cap, dtype=np.int64)
    tmp_g_arr = np.empty(cap, dtype=np.int64)
    tmp_a_arr = np.empty(cap, dtype=np.float64)
    tmp_t_arr = np.empty(cap, dtype=np.float64)
    cdef long[::1] tmp_pix = tmp_pix_arr
    cdef long[::1] tmp_g = tmp_g_arr
    cdef double[::1] tmp_a = tmp_a_arr
    cdef double[::1] tmp_t = tmp_t_arr

    tbuf_arr = np.ones(height * width, dtype=np.float64)
    cdef double[::1] tbuf = tbuf_arr

    cdef Py_ssize_t r = 0
    cdef long x, y, x0, x1, y0, y1, base
    cdef double a, b, c, mx, my, o, dx, dy, pw, al, t
    for oi in range(n_order):
        g = order_v[oi]
        x0 = bb[g, 0]; x1 = bb[g, 1]; y0 = bb[g, 2]; y1 = bb[g, 3]
        if x1 <= x0 or y1 <= y0:
            continue
        a = ic[g, 0]; b = ic[g, 1]; c = ic[g, 2]
        mx = mu[g, 0]; my = mu[g, 1]
        o = opa[g]
        for y in range(y0, y1):
            dy = y - my
            base = y * width
            for x in range(x0, x1):
                t = tbuf[base + x]
                if t < trans_min:
                    continue
                dx = x - mx
                pw = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                al = o * exp(pw)
                if al < alpha_min:
                    continue
                if al > alpha_max:
                    al = alpha_max
                tmp_pix[r] = base + x
                tmp_g[r] = g
                tmp_a[r] = al
                tmp_t[r] = t
                r += 1
                tbuf[base + x] = t * (1.0 - al)

    # stable counting sort by pixel keeps front-to-back order per pixel
    counts_arr = np.zeros(height * width + 1, dtype=np.int64)
    cdef long[::1] counts = counts_arr
    cdef Py_ssize_t i
    for i in range(r):
        counts[tmp_pix[i] + 1] += 1
    for i in range(height * width):
        counts[i + 1] += counts[i]

    out_pix_arr = np.empty(r, dtype=np.int64)
    out_g_arr = np.empty(r, dtype=np.int64)
    out_a_arr = np.empty(r, dtype=np.float64)
    out_t_arr = np.empty(r, dtype=np.float64)
    cdef long[::1] out_pix = out_pix_arr
    cdef long[::1] out_g = out_g_arr
    cdef double[::1] out_a = out_a_arr
    cdef double[::1] out_t = out_t_arr
    pos_arr = counts_arr[:height * width].copy()
    cdef long[::1] pos = pos_arr
    cdef long p, j
    for i in range(r):
        p = tmp_pix[i]
        j = pos[p]
        pos[p] += 1
        out_pix[j] = p
        out_g[j] = tmp_g[i]
        out_a[j] = tmp_a[i]
        out_t[j] = tmp_t[i]
    return out_pix_arr, out_g_arr, out_a_arr, out_t_arr


def splat_backward(pix, gauss, alpha, trans, colors, z, opacities, mean2d,
                   inv_cov, grad_color_flat, grad_depth_acc, grad_alpha_img,
                   total_color_fg, total_depth, total_alpha, background,
                   double alpha_max, int width):
    cdef long[::1] pix_v = np.ascontiguousarray(pix, dtype=np.int64)
    cdef long[::1] g_v = np.ascontiguousarray(gauss, dtype=np.int64)
    cdef double[::1] a_v = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef double[::1] t_v = np.ascontiguousarray(trans, dtype=np.float64)
    cdef double[:, ::1] col = np.ascontiguousarray(colors, dtype=np.float64)
    cdef double[::1] z_v = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[::1] opa = np.ascontiguousarray(opacities, dtype=np.float64)
    cdef double[:, ::1] mu = np.ascontiguousarray(mean2d, dtype=np.float64)
    cdef double[:, ::1] ic = np.ascontiguousarray(inv_cov, dtype=np.float64)
    cdef double[:, ::1] gc = np.ascontiguousarray(grad_color_flat, dtype=np.float64)
    cdef double[::1] gd = np.ascontiguousarray(grad_depth_acc, dtype=np.float64)
    cdef double[::1] ga = np.ascontiguousarray(grad_alpha_img, dtype=np.float64)
    cdef double[:, ::1] tot_c = np.ascontiguousarray(total_color_fg, dtype=np.float64)
    cdef double[::1] tot_d = np.ascontiguousarray(total_depth, dtype=np.float64)
    cdef double[::1] tot_w = np.ascontiguousarray(total_alpha, dtype=np.float64)
    cdef double[::1] bg = np.ascontiguousarray(background, dtype=np.float64)

    cdef Py_ssize_t n = col.shape[0]
    grad_colors_arr = np.zeros((n, 3), dtype=np.float64)
    grad_opacity_arr = np.zeros(n, dtype=np.float64)
    grad_mean_arr = np.zeros((n, 2), dtype=np.float64)
    grad_ic_arr = np.zeros((n, 3), dtype=np.float64)
    grad_z_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] g_col = grad_colors_arr
    cdef double[::1] g_opa = grad_opacity_arr
    cdef double[:, ::1] g_mu = grad_mean_arr
    cdef double[:, ::1] g_ic = grad_ic_arr
    cdef double[::1] g_z = grad_z_arr

    cdef Py_ssize_t i, r = pix_v.shape[0]
    cdef long p, g, prev_p = -1, px, py
    cdef double pc0, pc1, pc2, pd, pw_acc
    cdef double w, al, t, one_minus, trans_end, galpha, gpow
    cdef double sc0, sc1, sc2, sd, sw, dx, dy, mdx, mdy
    pc0 = pc1 = pc2 = pd = pw_acc = 0.0
    for i in range(r):
        p = pix_v[i]
        if p != prev_p:
            pc0 = pc1 = pc2 = pd = pw_acc = 0.0
            prev_p = p
        g = g_v[i]
        al = a_v[i]
        t = t_v[i]
        w = al * t
        g_col[g, 0] += w * gc[p, 0]
        g_col[g, 1] += w * gc[p, 1]
        g_col[g, 2] += w * gc[p, 2]
        pc0 += w * col[g, 0]
        pc1 += w * col[g, 1]
        pc2 += w * col[g, 2]
        pd += w * z_v[g]
        pw_acc += w
        sc0 = tot_c[p, 0] - pc0
        sc1 = tot_c[p, 1] - pc1
        sc2 = tot_c[p, 2] - pc2
        sd = tot_d[p] - pd
        sw = tot_w[p] - pw_acc
        one_minus = 1.0 - al
        trans_end = 1.0 - tot_w[p]
        galpha = (gc[p, 0] * (col[g, 0] * t - (sc0 + trans_end * bg[0]) / one_minus)
                  + gc[p, 1] * (col[g, 1] * t - (sc1 + trans_end * bg[1]) / one_minus)
                  + gc[p, 2] * (col[g, 2] * t - (sc2 + trans_end * bg[2]) / one_minus))
        galpha += gd[p] * (z_v[g] * t - sd / one_minus)
        galpha += ga[p] * (t - sw / one_minus)
        g_z[g] += gd[p] * w
        if al >= alpha_max:
            continue
        if opa[g] > 0:
            g_opa[g] += galpha * al / opa[g]
        gpow = galpha * al
        py = p / width
        px = p - py * width
        dx = px - mu[g, 0]
        dy = py - mu[g, 1]
        mdx = ic[g, 0] * dx + ic[g, 1] * dy
        mdy = ic[g, 1] * dx + ic[g, 2] * dy
        g_mu[g, 0] += gpow * mdx
        g_mu[g, 1] += gpow * mdy
        g_ic[g, 0] += -0.5 * gpow * dx * dx
        g_ic[g, 1] += -gpow * dx * dy
        g_ic[g, 2] += -0.5 * gpow * dy * dy
    return grad_colors_arr, grad_opacity_arr, grad_mean_arr, grad_ic_arr, grad_z_arr
