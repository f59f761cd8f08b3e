//! Dense loops behind the tape operations, forward and adjoint.

use super::tensor::{Dims, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Norm {
    /// Window sum, then divide by the window's voxel count (forward mean filter).
    After,
    /// Divide by the count first, then window sum (transpose of `After`).
    Before,
}

fn axis_len(dims: Dims, axis: usize) -> usize {
    dims.as_array()[axis]
}

fn axis_stride(dims: Dims, axis: usize) -> usize {
    match axis {
        0 => 1,
        1 => dims.nx,
        _ => dims.nx * dims.ny,
    }
}

/// Calls `f(start)` for the first element of every line parallel to `axis`.
fn for_each_line(dims: Dims, channels: usize, axis: usize, mut f: impl FnMut(usize)) {
    let n = dims.voxels();
    for c in 0..channels {
        for z in 0..if axis == 2 { 1 } else { dims.nz } {
            for y in 0..if axis == 1 { 1 } else { dims.ny } {
                for x in 0..if axis == 0 { 1 } else { dims.nx } {
                    f(c * n + dims.index(x, y, z));
                }
            }
        }
    }
}

#[inline]
fn window(i: usize, r: usize, n: usize) -> (usize, usize) {
    (i.saturating_sub(r), (i + r).min(n - 1))
}

pub(crate) fn box_pass(
    data: &mut [f64],
    dims: Dims,
    channels: usize,
    axis: usize,
    radius: usize,
    norm: Norm,
) {
    let n = axis_len(dims, axis);
    if n == 1 || radius == 0 {
        return;
    }
    let stride = axis_stride(dims, axis);
    let mut line = vec![0.0; n];
    let mut prefix = vec![0.0; n + 1];
    for_each_line(dims, channels, axis, |start| {
        for (i, v) in line.iter_mut().enumerate() {
            let idx = start + i * stride;
            *v = data[idx];
            if norm == Norm::Before {
                let (lo, hi) = window(i, radius, n);
                *v /= (hi - lo + 1) as f64;
            }
        }
        for i in 0..n {
            prefix[i + 1] = prefix[i] + line[i];
        }
        for i in 0..n {
            let (lo, hi) = window(i, radius, n);
            let mut s = prefix[hi + 1] - prefix[lo];
            if norm == Norm::After {
                s /= (hi - lo + 1) as f64;
            }
            data[start + i * stride] = s;
        }
    });
}

pub(crate) fn avg_pool2(t: &Tensor3) -> Vec<f64> {
    let (d, ch) = (t.dims(), t.channels());
    let o = d.pooled();
    let mut out = vec![0.0; o.voxels() * ch];
    for c in 0..ch {
        for z in 0..o.nz {
            for y in 0..o.ny {
                for x in 0..o.nx {
                    let mut s = 0.0;
                    let mut cnt = 0usize;
                    for zz in 2 * z..(2 * z + 2).min(d.nz) {
                        for yy in 2 * y..(2 * y + 2).min(d.ny) {
                            for xx in 2 * x..(2 * x + 2).min(d.nx) {
                                s += t.get(xx, yy, zz, c);
                                cnt += 1;
                            }
                        }
                    }
                    out[c * o.voxels() + o.index(x, y, z)] = s / cnt as f64;
                }
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(x: &Tensor3, g: &[f64]) -> Vec<f64> {
    let (d, ch) = (x.dims(), x.channels());
    let o = d.pooled();
    let mut gx = vec![0.0; x.len()];
    for c in 0..ch {
        for z in 0..o.nz {
            for y in 0..o.ny {
                for x in 0..o.nx {
                    let zr = 2 * z..(2 * z + 2).min(d.nz);
                    let yr = 2 * y..(2 * y + 2).min(d.ny);
                    let xr = 2 * x..(2 * x + 2).min(d.nx);
                    let cnt = zr.len() * yr.len() * xr.len();
                    let share = g[c * o.voxels() + o.index(x, y, z)] / cnt as f64;
                    for zz in zr {
                        for yy in yr.clone() {
                            for xx in xr.clone() {
                                gx[c * d.voxels() + d.index(xx, yy, zz)] += share;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Stencil for one axis position: `(plus, minus, weight)` so that
/// `df = weight * (f[plus] - f[minus])`.
#[inline]
fn diff_stencil(i: usize, n: usize) -> Option<(usize, usize, f64)> {
    if n < 2 {
        return None;
    }
    let inv_h = (n - 1) as f64;
    Some(if i == 0 {
        (1, 0, inv_h)
    } else if i == n - 1 {
        (n - 1, n - 2, inv_h)
    } else {
        (i + 1, i - 1, 0.5 * inv_h)
    })
}

pub(crate) fn spatial_gradient(t: &Tensor3) -> Vec<f64> {
    let (d, ch) = (t.dims(), t.channels());
    let nv = d.voxels();
    let mut out = vec![0.0; nv * ch * 3];
    for c in 0..ch {
        let src = t.channel(c);
        for axis in 0..3 {
            let n = axis_len(d, axis);
            let stride = axis_stride(d, axis);
            let dst = &mut out[(3 * c + axis) * nv..(3 * c + axis + 1) * nv];
            for z in 0..d.nz {
                for y in 0..d.ny {
                    for x in 0..d.nx {
                        let p = d.index(x, y, z);
                        let i = [x, y, z][axis];
                        if let Some((plus, minus, w)) = diff_stencil(i, n) {
                            let base = p - i * stride;
                            dst[p] = w * (src[base + plus * stride] - src[base + minus * stride]);
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn spatial_gradient_backward(x: &Tensor3, g: &[f64]) -> Vec<f64> {
    let (d, ch) = (x.dims(), x.channels());
    let nv = d.voxels();
    let mut gx = vec![0.0; x.len()];
    for c in 0..ch {
        for axis in 0..3 {
            let n = axis_len(d, axis);
            let stride = axis_stride(d, axis);
            let up = &g[(3 * c + axis) * nv..(3 * c + axis + 1) * nv];
            let dst = &mut gx[c * nv..(c + 1) * nv];
            for z in 0..d.nz {
                for y in 0..d.ny {
                    for x in 0..d.nx {
                        let p = d.index(x, y, z);
                        let i = [x, y, z][axis];
                        if let Some((plus, minus, w)) = diff_stencil(i, n) {
                            let base = p - i * stride;
                            dst[base + plus * stride] += w * up[p];
                            dst[base + minus * stride] -= w * up[p];
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Interpolation cell along one axis for a normalized coordinate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell {
    pub i0: usize,
    pub i1: usize,
    pub t: f64,
    /// d(continuous index)/d(coordinate); zero when clamped or degenerate.
    pub slope: f64,
}

#[inline]
pub(crate) fn cell(coord: f64, n: usize) -> Cell {
    if n == 1 {
        return Cell {
            i0: 0,
            i1: 0,
            t: 0.0,
            slope: 0.0,
        };
    }
    let clamped = !(0.0..=1.0).contains(&coord);
    let f = coord.clamp(0.0, 1.0) * (n - 1) as f64;
    let i0 = (f.floor() as usize).min(n - 2);
    Cell {
        i0,
        i1: i0 + 1,
        t: f - i0 as f64,
        slope: if clamped { 0.0 } else { (n - 1) as f64 },
    }
}

pub(crate) fn trilinear_forward(image: &Tensor3, coords: &Tensor3) -> Vec<f64> {
    let (di, ch) = (image.dims(), image.channels());
    let nvi = di.voxels();
    let no = coords.dims().voxels();
    let (cx, cy, cz) = (coords.channel(0), coords.channel(1), coords.channel(2));
    let img = image.data();
    let mut out = vec![0.0; no * ch];
    for o in 0..no {
        let (a, b, c) = (cell(cx[o], di.nx), cell(cy[o], di.ny), cell(cz[o], di.nz));
        let corners = corner_offsets(di, a, b, c);
        let w = corner_weights(a.t, b.t, c.t);
        for k in 0..ch {
            let base = k * nvi;
            let mut s = 0.0;
            for j in 0..8 {
                s += w[j] * img[base + corners[j]];
            }
            out[k * no + o] = s;
        }
    }
    out
}

pub(crate) fn trilinear_backward(
    image: &Tensor3,
    coords: &Tensor3,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (di, ch) = (image.dims(), image.channels());
    let nvi = di.voxels();
    let no = coords.dims().voxels();
    let (cx, cy, cz) = (coords.channel(0), coords.channel(1), coords.channel(2));
    let img = image.data();
    let mut gi = vec![0.0; image.len()];
    let mut gc = vec![0.0; coords.len()];
    for o in 0..no {
        let (a, b, c) = (cell(cx[o], di.nx), cell(cy[o], di.ny), cell(cz[o], di.nz));
        let corners = corner_offsets(di, a, b, c);
        let w = corner_weights(a.t, b.t, c.t);
        let dw = corner_weight_derivs(a.t, b.t, c.t);
        let mut dcoord = [0.0; 3];
        for k in 0..ch {
            let go = g[k * no + o];
            if go == 0.0 {
                continue;
            }
            let base = k * nvi;
            for j in 0..8 {
                gi[base + corners[j]] += w[j] * go;
                let v = img[base + corners[j]];
                for (axis, d) in dcoord.iter_mut().enumerate() {
                    *d += go * dw[axis][j] * v;
                }
            }
        }
        gc[o] = dcoord[0] * a.slope;
        gc[no + o] = dcoord[1] * b.slope;
        gc[2 * no + o] = dcoord[2] * c.slope;
    }
    (gi, gc)
}

// Corner order: bit 0 -> x1, bit 1 -> y1, bit 2 -> z1.
#[inline]
fn corner_offsets(d: Dims, a: Cell, b: Cell, c: Cell) -> [usize; 8] {
    let mut out = [0; 8];
    for (j, slot) in out.iter_mut().enumerate() {
        let x = if j & 1 == 0 { a.i0 } else { a.i1 };
        let y = if j & 2 == 0 { b.i0 } else { b.i1 };
        let z = if j & 4 == 0 { c.i0 } else { c.i1 };
        *slot = d.index(x, y, z);
    }
    out
}

#[inline]
fn corner_weights(tx: f64, ty: f64, tz: f64) -> [f64; 8] {
    let wx = [1.0 - tx, tx];
    let wy = [1.0 - ty, ty];
    let wz = [1.0 - tz, tz];
    let mut w = [0.0; 8];
    for (j, slot) in w.iter_mut().enumerate() {
        *slot = wx[j & 1] * wy[(j >> 1) & 1] * wz[(j >> 2) & 1];
    }
    w
}

#[inline]
fn corner_weight_derivs(tx: f64, ty: f64, tz: f64) -> [[f64; 8]; 3] {
    let wx = [1.0 - tx, tx];
    let wy = [1.0 - ty, ty];
    let wz = [1.0 - tz, tz];
    let dv = [-1.0, 1.0];
    std::array::from_fn(|axis| {
        std::array::from_fn(|j| {
            let (bx, by, bz) = (j & 1, (j >> 1) & 1, (j >> 2) & 1);
            match axis {
                0 => dv[bx] * wy[by] * wz[bz],
                1 => wx[bx] * dv[by] * wz[bz],
                _ => wx[bx] * wy[by] * dv[bz],
            }
        })
    })
}

#[inline]
fn shifted(i: usize, o: isize, n: usize) -> usize {
    (i as isize + o).clamp(0, n as isize - 1) as usize
}

pub(crate) fn shift(t: &Tensor3, offset: [isize; 3]) -> Vec<f64> {
    let (d, ch) = (t.dims(), t.channels());
    let mut out = Vec::with_capacity(t.len());
    for c in 0..ch {
        for z in 0..d.nz {
            let zs = shifted(z, offset[2], d.nz);
            for y in 0..d.ny {
                let ys = shifted(y, offset[1], d.ny);
                for x in 0..d.nx {
                    out.push(t.get(shifted(x, offset[0], d.nx), ys, zs, c));
                }
            }
        }
    }
    out
}

pub(crate) fn shift_backward(x: &Tensor3, offset: [isize; 3], g: &[f64]) -> Vec<f64> {
    let (d, ch) = (x.dims(), x.channels());
    let mut gx = vec![0.0; x.len()];
    let mut k = 0;
    for c in 0..ch {
        for z in 0..d.nz {
            let zs = shifted(z, offset[2], d.nz);
            for y in 0..d.ny {
                let ys = shifted(y, offset[1], d.ny);
                for x in 0..d.nx {
                    gx[c * d.voxels() + d.index(shifted(x, offset[0], d.nx), ys, zs)] += g[k];
                    k += 1;
                }
            }
        }
    }
    gx
}

pub(crate) fn crop(t: &Tensor3, m: usize, out: Dims) -> Vec<f64> {
    let mut data = Vec::with_capacity(out.voxels() * t.channels());
    for c in 0..t.channels() {
        for z in 0..out.nz {
            for y in 0..out.ny {
                for x in 0..out.nx {
                    data.push(t.get(x + m, y + m, z + m, c));
                }
            }
        }
    }
    data
}

pub(crate) fn crop_backward(x: &Tensor3, m: usize, out: Dims, g: &[f64]) -> Vec<f64> {
    let d = x.dims();
    let mut gx = vec![0.0; x.len()];
    let mut k = 0;
    for c in 0..x.channels() {
        for z in 0..out.nz {
            for y in 0..out.ny {
                for xx in 0..out.nx {
                    gx[c * d.voxels() + d.index(xx + m, y + m, z + m)] = g[k];
                    k += 1;
                }
            }
        }
    }
    gx
}
