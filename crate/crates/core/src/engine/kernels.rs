//! Direct reference kernels over NHWC buffers.
//!
//! Convolution and matmul are generic over the element type so the same loop
//! nest serves FP32 (f32 accumulator) and INT8 (i32 accumulator).

use std::ops::AddAssign;

use crate::graph::{conv_out_dim, same_pad_before, Padding};

/// Multiply-accumulate element.
pub trait Mac: Copy + Send + Sync {
    type Acc: Copy + Default + AddAssign + Send;
    fn mul(a: Self, b: Self) -> Self::Acc;
}

impl Mac for f32 {
    type Acc = f32;
    #[inline(always)]
    fn mul(a: f32, b: f32) -> f32 {
        a * b
    }
}

impl Mac for i8 {
    type Acc = i32;
    #[inline(always)]
    fn mul(a: i8, b: i8) -> i32 {
        i32::from(a) * i32::from(b)
    }
}

/// Geometry of a strided 2-D window over an NHWC input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: [usize; 2],
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        kh: usize,
        kw: usize,
        stride: [usize; 2],
        padding: Padding,
    ) -> Option<ConvGeom> {
        let &[n, h, w, c] = input else { return None };
        let oh = conv_out_dim(h, kh, stride[0], padding)?;
        let ow = conv_out_dim(w, kw, stride[1], padding)?;
        let (pad_top, pad_left) = match padding {
            Padding::Same => (same_pad_before(h, kh, stride[0]), same_pad_before(w, kw, stride[1])),
            Padding::Valid => (0, 0),
        };
        Some(ConvGeom {
            n,
            h,
            w,
            c,
            kh,
            kw,
            stride,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    #[inline]
    fn in_row(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.stride[0] + k).checked_sub(self.pad_top).filter(|&i| i < self.h)
    }

    #[inline]
    fn in_col(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.stride[1] + k).checked_sub(self.pad_left).filter(|&i| i < self.w)
    }
}

/// Full convolution; kernel layout `(kh, kw, c, co)`, output `(n, oh, ow, co)`.
pub fn conv2d<T: Mac>(x: &[T], kernel: &[T], g: &ConvGeom, co: usize) -> Vec<T::Acc> {
    let mut out = vec![T::Acc::default(); g.n * g.oh * g.ow * co];
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let base = ((b * g.oh + oy) * g.ow + ox) * co;
                let acc = &mut out[base..base + co];
                for ky in 0..g.kh {
                    let Some(iy) = g.in_row(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.in_col(ox, kx) else { continue };
                        let px = &x[((b * g.h + iy) * g.w + ix) * g.c..][..g.c];
                        let taps = &kernel[(ky * g.kw + kx) * g.c * co..][..g.c * co];
                        for (ci, &xv) in px.iter().enumerate() {
                            for (a, &kv) in acc.iter_mut().zip(&taps[ci * co..(ci + 1) * co]) {
                                *a += T::mul(xv, kv);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Depthwise convolution; kernel `(kh, kw, c, mult)`, output channel `c * mult + m`.
pub fn depthwise<T: Mac>(x: &[T], kernel: &[T], g: &ConvGeom, mult: usize) -> Vec<T::Acc> {
    let co = g.c * mult;
    let mut out = vec![T::Acc::default(); g.n * g.oh * g.ow * co];
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let base = ((b * g.oh + oy) * g.ow + ox) * co;
                let acc = &mut out[base..base + co];
                for ky in 0..g.kh {
                    let Some(iy) = g.in_row(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.in_col(ox, kx) else { continue };
                        let px = &x[((b * g.h + iy) * g.w + ix) * g.c..][..g.c];
                        let taps = &kernel[(ky * g.kw + kx) * co..][..co];
                        for (ci, &xv) in px.iter().enumerate() {
                            for m in 0..mult {
                                acc[ci * mult + m] += T::mul(xv, taps[ci * mult + m]);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `(n, f) × (f, o) → (n, o)`.
pub fn matmul<T: Mac>(a: &[T], b: &[T], n: usize, f: usize, o: usize) -> Vec<T::Acc> {
    let mut out = vec![T::Acc::default(); n * o];
    for r in 0..n {
        let acc = &mut out[r * o..(r + 1) * o];
        for (k, &av) in a[r * f..(r + 1) * f].iter().enumerate() {
            for (slot, &bv) in acc.iter_mut().zip(&b[k * o..(k + 1) * o]) {
                *slot += T::mul(av, bv);
            }
        }
    }
    out
}

/// Output shape and `(a index, b index)` for every output element under
/// trailing-axis broadcasting (see [`crate::graph::broadcast_shape`]).
#[allow(clippy::type_complexity)]
pub fn broadcast_pairs(
    a_shape: &[usize],
    b_shape: &[usize],
) -> Option<(Vec<usize>, Vec<(usize, usize)>)> {
    let out = crate::graph::broadcast_shape(a_shape, b_shape)?;
    let total: usize = out.iter().product();
    let la: usize = a_shape.iter().product();
    let lb: usize = b_shape.iter().product();
    let pick = |len: usize, i: usize| if len == total { i } else if len == 1 { 0 } else { i % len };
    Some((out, (0..total).map(|i| (pick(la, i), pick(lb, i))).collect()))
}

/// NaN maps to 0, which `clamp` would not do.
#[allow(clippy::manual_clamp)]
pub fn relu6(x: f32) -> f32 {
    x.max(0.0).min(6.0)
}

/// Sums over `axes`, returning `(sums, count per output element, out shape)`.
pub fn reduce_sum<T: Copy, A: Copy + Default + AddAssign>(
    x: &[T],
    shape: &[usize],
    axes: &[usize],
    keep_dims: bool,
    widen: impl Fn(T) -> A,
) -> (Vec<A>, usize, Vec<usize>) {
    let kept: Vec<usize> = (0..shape.len()).filter(|i| !axes.contains(i)).collect();
    let out_len: usize = kept.iter().map(|&i| shape[i]).product();
    let count: usize = axes.iter().map(|&i| shape[i]).product();
    let mut sums = vec![A::default(); out_len];
    let mut idx = vec![0usize; shape.len()];
    for &v in x {
        let mut o = 0;
        for &k in &kept {
            o = o * shape[k] + idx[k];
        }
        sums[o] += widen(v);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let out_shape = shape
        .iter()
        .enumerate()
        .filter_map(|(i, &d)| match (axes.contains(&i), keep_dims) {
            (false, _) => Some(d),
            (true, true) => Some(1),
            (true, false) => None,
        })
        .collect();
    (sums, count, out_shape)
}

/// Zero padding with `[before, after]` per dimension.
pub fn pad<T: Copy>(x: &[T], shape: &[usize], pads: &[[usize; 2]], zero: T) -> (Vec<T>, Vec<usize>) {
    let out_shape: Vec<usize> = shape.iter().zip(pads).map(|(d, [b, a])| d + b + a).collect();
    let mut out = vec![zero; out_shape.iter().product()];
    if shape.is_empty() {
        out.copy_from_slice(x);
        return (out, out_shape);
    }
    let rank = shape.len();
    let row = shape[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    for chunk in x.chunks_exact(row) {
        let mut o = 0;
        for d in 0..rank - 1 {
            o = o * out_shape[d] + idx[d] + pads[d][0];
        }
        o = o * out_shape[rank - 1] + pads[rank - 1][0];
        out[o..o + row].copy_from_slice(chunk);
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out, out_shape)
}
