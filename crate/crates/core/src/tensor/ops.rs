//! Value-level forward ops and their vector-Jacobian products.
//!
//! Every sum runs in `f64` in flat-index order. The tape in `tape.rs` wires
//! these together; they are also usable directly for inference.

use super::{Real, Tensor};
use crate::error::{Result, StanError};

#[inline]
fn f<T: Real>(v: T) -> f64 {
    v.as_f64()
}

fn leading(shape: &[usize]) -> usize {
    shape[..shape.len().saturating_sub(1)].iter().product()
}

/// `y[.., j] = sum_i x[.., i] * w[i, j] + b[j]`.
pub fn linear_map<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if w.rank() != 2 || x.rank() == 0 || x.channels() != w.shape()[0] {
        return Err(StanError::dim("linear_map", x.shape(), w.shape()));
    }
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    if b.shape() != [dout] {
        return Err(StanError::dim("linear_map(bias)", w.shape(), b.shape()));
    }
    let rows = leading(x.shape());
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = Vec::with_capacity(rows * dout);
    let mut acc = vec![0.0f64; dout];
    for r in 0..rows {
        for (j, a) in acc.iter_mut().enumerate() {
            *a = f(bd[j]);
        }
        let xr = &xd[r * din..(r + 1) * din];
        for (i, &xi) in xr.iter().enumerate() {
            let xi = f(xi);
            if xi == 0.0 {
                continue;
            }
            let wr = &wd[i * dout..(i + 1) * dout];
            for (a, &wij) in acc.iter_mut().zip(wr) {
                *a += xi * f(wij);
            }
        }
        out.extend(acc.iter().map(|&a| T::of(a)));
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    Tensor::new(&shape, out)
}

/// Returns `(dx, dw, db)` for [`linear_map`].
pub fn linear_map_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let rows = leading(x.shape());
    let (xd, wd, gd) = (x.data(), w.data(), g.data());

    let mut dx = Vec::with_capacity(rows * din);
    for r in 0..rows {
        let gr = &gd[r * dout..(r + 1) * dout];
        for i in 0..din {
            let wr = &wd[i * dout..(i + 1) * dout];
            let s = gr.iter().zip(wr).fold(0.0, |s, (&gj, &wj)| s + f(gj) * f(wj));
            dx.push(T::of(s));
        }
    }

    let mut dw = vec![0.0f64; din * dout];
    let mut db = vec![0.0f64; dout];
    for r in 0..rows {
        let gr = &gd[r * dout..(r + 1) * dout];
        for (j, &gj) in gr.iter().enumerate() {
            db[j] += f(gj);
        }
        let xr = &xd[r * din..(r + 1) * din];
        for (i, &xi) in xr.iter().enumerate() {
            let xi = f(xi);
            if xi == 0.0 {
                continue;
            }
            let dwr = &mut dw[i * dout..(i + 1) * dout];
            for (d, &gj) in dwr.iter_mut().zip(gr) {
                *d += xi * f(gj);
            }
        }
    }
    (
        Tensor::new(x.shape(), dx).unwrap(),
        Tensor::new(w.shape(), dw.into_iter().map(T::of).collect()).unwrap(),
        Tensor::new(&[dout], db.into_iter().map(T::of).collect()).unwrap(),
    )
}

struct ConvGeom {
    frames: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
}

fn conv_geometry<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<ConvGeom> {
    if w.rank() != 4 || w.shape()[0] != w.shape()[1] {
        return Err(StanError::dim("conv2d(kernel)", x.shape(), w.shape()));
    }
    let k = w.shape()[0];
    if k.is_multiple_of(2) {
        return Err(StanError::Config(format!(
            "conv2d kernel size must be odd, got {k}"
        )));
    }
    if !(3..=4).contains(&x.rank()) || x.channels() != w.shape()[2] {
        return Err(StanError::dim("conv2d", x.shape(), w.shape()));
    }
    let cout = w.shape()[3];
    if b.shape() != [cout] {
        return Err(StanError::dim("conv2d(bias)", w.shape(), b.shape()));
    }
    let s = x.shape();
    let r = s.len();
    Ok(ConvGeom {
        frames: if r == 4 { s[0] } else { 1 },
        h: s[r - 3],
        w: s[r - 2],
        cin: s[r - 1],
        cout,
        k,
    })
}

/// Same-padded 2-D cross-correlation over `[H, W, Cin]`, or per frame over
/// `[T, H, W, Cin]`. The kernel is `[k, k, Cin, Cout]` with odd `k`.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ConvGeom {
        frames,
        h,
        w: wd_,
        cin,
        cout,
        k,
    } = conv_geometry(x, w, b)?;
    let pad = (k / 2) as isize;
    let (xd, kd, bd) = (x.data(), w.data(), b.data());
    let mut out = Vec::with_capacity(frames * h * wd_ * cout);
    let mut acc = vec![0.0f64; cout];
    for fr in 0..frames {
        let base = fr * h * wd_ * cin;
        for i in 0..h {
            for j in 0..wd_ {
                for (co, a) in acc.iter_mut().enumerate() {
                    *a = f(bd[co]);
                }
                for di in 0..k {
                    let si = i as isize + di as isize - pad;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dj in 0..k {
                        let sj = j as isize + dj as isize - pad;
                        if sj < 0 || sj >= wd_ as isize {
                            continue;
                        }
                        let xoff = base + (si as usize * wd_ + sj as usize) * cin;
                        let koff = (di * k + dj) * cin * cout;
                        for ci in 0..cin {
                            let xv = f(xd[xoff + ci]);
                            if xv == 0.0 {
                                continue;
                            }
                            let kr = &kd[koff + ci * cout..koff + (ci + 1) * cout];
                            for (a, &kv) in acc.iter_mut().zip(kr) {
                                *a += xv * f(kv);
                            }
                        }
                    }
                }
                out.extend(acc.iter().map(|&a| T::of(a)));
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = cout;
    Tensor::new(&shape, out)
}

/// Returns `(dx, dw, db)` for [`conv2d`].
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = x.shape();
    let r = s.len();
    let frames = if r == 4 { s[0] } else { 1 };
    let (h, wd_, cin) = (s[r - 3], s[r - 2], s[r - 1]);
    let k = w.shape()[0];
    let cout = w.shape()[3];
    let pad = (k / 2) as isize;
    let (xd, kd, gd) = (x.data(), w.data(), g.data());

    let mut dx = vec![0.0f64; x.numel()];
    let mut dw = vec![0.0f64; w.numel()];
    let mut db = vec![0.0f64; cout];
    for fr in 0..frames {
        let base = fr * h * wd_ * cin;
        for i in 0..h {
            for j in 0..wd_ {
                let goff = ((fr * h + i) * wd_ + j) * cout;
                let gr = &gd[goff..goff + cout];
                for (d, &gv) in db.iter_mut().zip(gr) {
                    *d += f(gv);
                }
                for di in 0..k {
                    let si = i as isize + di as isize - pad;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dj in 0..k {
                        let sj = j as isize + dj as isize - pad;
                        if sj < 0 || sj >= wd_ as isize {
                            continue;
                        }
                        let xoff = base + (si as usize * wd_ + sj as usize) * cin;
                        let koff = (di * k + dj) * cin * cout;
                        for ci in 0..cin {
                            let xv = f(xd[xoff + ci]);
                            let kr = &kd[koff + ci * cout..koff + (ci + 1) * cout];
                            let dwr = &mut dw[koff + ci * cout..koff + (ci + 1) * cout];
                            let mut sx = 0.0;
                            for co in 0..cout {
                                let gv = f(gr[co]);
                                sx += gv * f(kr[co]);
                                dwr[co] += gv * xv;
                            }
                            dx[xoff + ci] += sx;
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape(), dx.into_iter().map(T::of).collect()).unwrap(),
        Tensor::new(w.shape(), dw.into_iter().map(T::of).collect()).unwrap(),
        Tensor::new(&[cout], db.into_iter().map(T::of).collect()).unwrap(),
    )
}

#[inline]
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Gradient through sigmoid given its output `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(g.data())
        .map(|(&yv, &gv)| gv * yv * (T::one() - yv))
        .collect();
    Tensor::new(y.shape(), data).unwrap()
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
        .collect();
    Tensor::new(x.shape(), data).unwrap()
}

/// Mean over `H` and `W` of a `[T, H, W, C]` tensor.
pub fn avg_pool_spatial<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(StanError::dim("avg_pool_spatial", x.shape(), &[0, 0, 0, 0]));
    }
    let s = x.shape();
    let (t, hw, c) = (s[0], s[1] * s[2], s[3]);
    let xd = x.data();
    let mut out = Vec::with_capacity(t * c);
    let mut acc = vec![0.0f64; c];
    for ti in 0..t {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for p in 0..hw {
            let off = (ti * hw + p) * c;
            for (a, &v) in acc.iter_mut().zip(&xd[off..off + c]) {
                *a += f(v);
            }
        }
        out.extend(acc.iter().map(|&a| T::of(a / hw as f64)));
    }
    Tensor::new(&[t, c], out)
}

pub fn avg_pool_spatial_backward<T: Real>(input_shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let (t, hw, c) = (
        input_shape[0],
        input_shape[1] * input_shape[2],
        input_shape[3],
    );
    let scale = 1.0 / hw as f64;
    let gd = g.data();
    let mut out = Vec::with_capacity(t * hw * c);
    for ti in 0..t {
        let gr = &gd[ti * c..(ti + 1) * c];
        for _ in 0..hw {
            out.extend(gr.iter().map(|&v| T::of(f(v) * scale)));
        }
    }
    Tensor::new(input_shape, out).unwrap()
}

/// Mean over the leading (time) axis. A rank-1 input reduces to shape `[1]`.
pub fn avg_pool_temporal<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() == 0 || x.shape()[0] == 0 {
        return Err(StanError::dim("avg_pool_temporal", x.shape(), &[1]));
    }
    let t = x.shape()[0];
    let rest = x.numel() / t;
    let xd = x.data();
    let mut acc = vec![0.0f64; rest];
    for ti in 0..t {
        for (a, &v) in acc.iter_mut().zip(&xd[ti * rest..(ti + 1) * rest]) {
            *a += f(v);
        }
    }
    let shape = if x.rank() == 1 {
        vec![1]
    } else {
        x.shape()[1..].to_vec()
    };
    Tensor::new(&shape, acc.into_iter().map(|a| T::of(a / t as f64)).collect())
}

pub fn avg_pool_temporal_backward<T: Real>(input_shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let t = input_shape[0];
    let scale = 1.0 / t as f64;
    let row: Vec<T> = g.data().iter().map(|&v| T::of(f(v) * scale)).collect();
    let mut out = Vec::with_capacity(row.len() * t);
    for _ in 0..t {
        out.extend_from_slice(&row);
    }
    Tensor::new(input_shape, out).unwrap()
}

/// Repeat each `[T, D]` row over an `h x w` grid.
pub fn tile_spatial<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    if x.rank() != 2 || h == 0 || w == 0 {
        return Err(StanError::dim("tile_spatial", x.shape(), &[h, w]));
    }
    let (t, d) = (x.shape()[0], x.shape()[1]);
    let xd = x.data();
    let mut out = Vec::with_capacity(t * h * w * d);
    for ti in 0..t {
        let row = &xd[ti * d..(ti + 1) * d];
        for _ in 0..h * w {
            out.extend_from_slice(row);
        }
    }
    Tensor::new(&[t, h, w, d], out)
}

pub fn tile_spatial_backward<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    // g: [T, h, w, D] -> sum over h, w
    let s = g.shape();
    let (t, hw, d) = (s[0], s[1] * s[2], s[3]);
    let gd = g.data();
    let mut out = Vec::with_capacity(t * d);
    let mut acc = vec![0.0f64; d];
    for ti in 0..t {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for p in 0..hw {
            let off = (ti * hw + p) * d;
            for (a, &v) in acc.iter_mut().zip(&gd[off..off + d]) {
                *a += f(v);
            }
        }
        out.extend(acc.iter().map(|&a| T::of(a)));
    }
    Tensor::new(&[t, d], out).unwrap()
}

/// `out[t, h, w] = space[t, h, w] * time[t]`.
pub fn outer_product_st<T: Real>(space: &Tensor<T>, time: &Tensor<T>) -> Result<Tensor<T>> {
    if space.rank() != 3 || time.rank() != 1 || space.shape()[0] != time.shape()[0] {
        return Err(StanError::dim("outer_product_st", space.shape(), time.shape()));
    }
    let hw = space.shape()[1] * space.shape()[2];
    let (sd, td) = (space.data(), time.data());
    let data = sd
        .iter()
        .enumerate()
        .map(|(i, &s)| s * td[i / hw])
        .collect();
    Tensor::new(space.shape(), data)
}

/// Returns `(d_space, d_time)`.
pub fn outer_product_st_backward<T: Real>(
    space: &Tensor<T>,
    time: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let t = time.numel();
    let hw = space.shape()[1] * space.shape()[2];
    let (sd, td, gd) = (space.data(), time.data(), g.data());
    let ds = gd
        .iter()
        .enumerate()
        .map(|(i, &gv)| gv * td[i / hw])
        .collect();
    let mut dt = Vec::with_capacity(t);
    for ti in 0..t {
        let s = (ti * hw..(ti + 1) * hw).fold(0.0, |acc, i| acc + f(gd[i]) * f(sd[i]));
        dt.push(T::of(s));
    }
    (
        Tensor::new(space.shape(), ds).unwrap(),
        Tensor::new(time.shape(), dt).unwrap(),
    )
}

/// Scale every channel vector of `x[.., C]` by the matching entry of `a[..]`.
pub fn elementwise_mul<T: Real>(x: &Tensor<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != a.rank() + 1 || x.shape()[..a.rank()] != *a.shape() {
        return Err(StanError::dim("elementwise_mul", x.shape(), a.shape()));
    }
    let c = x.channels();
    let ad = a.data();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * ad[i / c])
        .collect();
    Tensor::new(x.shape(), data)
}

/// Returns `(dx, da)`.
pub fn elementwise_mul_backward<T: Real>(
    x: &Tensor<T>,
    a: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let c = x.channels();
    let (xd, ad, gd) = (x.data(), a.data(), g.data());
    let dx = gd
        .iter()
        .enumerate()
        .map(|(i, &gv)| gv * ad[i / c])
        .collect();
    let da = (0..a.numel())
        .map(|p| {
            let s = (p * c..(p + 1) * c).fold(0.0, |acc, i| acc + f(gd[i]) * f(xd[i]));
            T::of(s)
        })
        .collect();
    (
        Tensor::new(x.shape(), dx).unwrap(),
        Tensor::new(a.shape(), da).unwrap(),
    )
}

/// Channel-axis concatenation: `x`'s channels followed by `y`'s.
pub fn concat_channels<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    let r = x.rank();
    if r == 0 || y.rank() != r || x.shape()[..r - 1] != y.shape()[..r - 1] {
        return Err(StanError::dim("concat_channels", x.shape(), y.shape()));
    }
    let (c1, c2) = (x.channels(), y.channels());
    let rows = leading(x.shape());
    let (xd, yd) = (x.data(), y.data());
    let mut out = Vec::with_capacity(rows * (c1 + c2));
    for rix in 0..rows {
        out.extend_from_slice(&xd[rix * c1..(rix + 1) * c1]);
        out.extend_from_slice(&yd[rix * c2..(rix + 1) * c2]);
    }
    let mut shape = x.shape().to_vec();
    shape[r - 1] = c1 + c2;
    Tensor::new(&shape, out)
}

/// Channel slice `[from, to)` of the last axis.
pub fn slice_channels<T: Real>(x: &Tensor<T>, from: usize, to: usize) -> Result<Tensor<T>> {
    let c = x.channels();
    if from > to || to > c {
        return Err(StanError::dim("slice_channels", x.shape(), &[from, to]));
    }
    let rows = leading(x.shape());
    let xd = x.data();
    let mut out = Vec::with_capacity(rows * (to - from));
    for r in 0..rows {
        out.extend_from_slice(&xd[r * c + from..r * c + to]);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = to - from;
    Tensor::new(&shape, out)
}

pub fn add<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != y.shape() {
        return Err(StanError::dim("add", x.shape(), y.shape()));
    }
    let data = x.data().iter().zip(y.data()).map(|(&a, &b)| a + b).collect();
    Tensor::new(x.shape(), data)
}

/// Clamp bound applied to probabilities before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Mean multi-label binary cross-entropy and the number of clamped entries.
pub fn bce<T: Real>(p: &Tensor<T>, y: &[f64]) -> Result<(f64, usize)> {
    if p.numel() != y.len() || y.is_empty() {
        return Err(StanError::dim("bce", p.shape(), &[y.len()]));
    }
    let mut clamped = 0;
    let mut sum = 0.0f64;
    for (&pv, &yv) in p.data().iter().zip(y) {
        let raw = f(pv);
        let pc = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        if pc != raw {
            clamped += 1;
        }
        sum += yv * pc.ln() + (1.0 - yv) * (1.0 - pc).ln();
    }
    Ok((-sum / y.len() as f64, clamped))
}

pub fn bce_backward<T: Real>(p: &Tensor<T>, y: &[f64], g: T) -> Tensor<T> {
    let k = y.len() as f64;
    let gs = f(g);
    let data = p
        .data()
        .iter()
        .zip(y)
        .map(|(&pv, &yv)| {
            let raw = f(pv);
            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&raw) {
                return T::zero();
            }
            T::of(-gs / k * (yv / raw - (1.0 - yv) / (1.0 - raw)))
        })
        .collect();
    Tensor::new(p.shape(), data).unwrap()
}
