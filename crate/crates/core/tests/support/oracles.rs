//! Naive f64 reference implementations and random single-op cases.
//! Shared by core integration tests and the acceptance suite via `#[path]`.
#![allow(dead_code)]

use edgeclass_core::bundle::GraphBuilder;
use edgeclass_core::graph::{Attrs, OpKind, Padding};
use edgeclass_core::{Metadata, ModelBundle, PreprocessSpec, Tensor, ValueRange, Variant};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const KERNEL_OPS: [OpKind; 8] = [
    OpKind::Conv2D,
    OpKind::DepthwiseConv2D,
    OpKind::MatMul,
    OpKind::Mean,
    OpKind::Pad,
    OpKind::AddV2,
    OpKind::Mul,
    OpKind::Relu6,
];

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn unravel(mut i: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = i % shape[d];
        i /= shape[d];
    }
    idx
}

/// Output length and leading pad for one spatial axis.
fn axis_geometry(input: usize, k: usize, stride: usize, same: bool) -> (usize, isize) {
    if same {
        let out = input.div_ceil(stride);
        let total = ((out - 1) * stride + k).saturating_sub(input);
        (out, (total / 2) as isize)
    } else {
        ((input - k) / stride + 1, 0)
    }
}

/// NHWC input, (kh, kw, ci, co) kernel.
pub fn conv2d(x: &[f64], xs: [usize; 4], k: &[f64], ks: [usize; 4], stride: [usize; 2], same: bool) -> (Vec<f64>, Vec<usize>) {
    let [n, h, w, ci] = xs;
    let [kh, kw, _, co] = ks;
    let (oh, ph) = axis_geometry(h, kh, stride[0], same);
    let (ow, pw) = axis_geometry(w, kw, stride[1], same);
    let mut out = vec![0.0; n * oh * ow * co];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..co {
                    let mut acc = 0.0;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = (oy * stride[0] + dy) as isize - ph;
                            let ix = (ox * stride[1] + dx) as isize - pw;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for c in 0..ci {
                                let xv = x[((b * h + iy as usize) * w + ix as usize) * ci + c];
                                acc += xv * k[((dy * kw + dx) * ci + c) * co + o];
                            }
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * co + o] = acc;
                }
            }
        }
    }
    (out, vec![n, oh, ow, co])
}

/// NHWC input, (kh, kw, c, mult) kernel, output channel `c * mult + m`.
pub fn depthwise(x: &[f64], xs: [usize; 4], k: &[f64], ks: [usize; 4], stride: [usize; 2], same: bool) -> (Vec<f64>, Vec<usize>) {
    let [n, h, w, c] = xs;
    let [kh, kw, _, mult] = ks;
    let (oh, ph) = axis_geometry(h, kh, stride[0], same);
    let (ow, pw) = axis_geometry(w, kw, stride[1], same);
    let co = c * mult;
    let mut out = vec![0.0; n * oh * ow * co];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    for m in 0..mult {
                        let mut acc = 0.0;
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * stride[0] + dy) as isize - ph;
                                let ix = (ox * stride[1] + dx) as isize - pw;
                                if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                                    acc += x[((b * h + iy as usize) * w + ix as usize) * c + ch]
                                        * k[((dy * kw + dx) * c + ch) * mult + m];
                                }
                            }
                        }
                        out[((b * oh + oy) * ow + ox) * co + ch * mult + m] = acc;
                    }
                }
            }
        }
    }
    (out, vec![n, oh, ow, co])
}

pub fn matmul(a: &[f64], n: usize, f: usize, b: &[f64], o: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * o];
    for i in 0..n {
        for j in 0..o {
            out[i * o + j] = (0..f).map(|k| a[i * f + k] * b[k * o + j]).sum();
        }
    }
    out
}

pub fn mean(x: &[f64], shape: &[usize], axes: &[usize], keep: bool) -> (Vec<f64>, Vec<usize>) {
    let kept: Vec<usize> = shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect();
    let count: usize = axes.iter().map(|&a| shape[a]).product();
    let mut sums = vec![0.0; kept.iter().product()];
    let ks = strides_of(&kept);
    for (i, &v) in x.iter().enumerate() {
        let idx = unravel(i, shape);
        let j: usize = idx
            .iter()
            .enumerate()
            .map(|(d, &ix)| if axes.contains(&d) { 0 } else { ix * ks[d] })
            .sum();
        sums[j] += v;
    }
    let out_shape = if keep {
        kept
    } else {
        shape.iter().enumerate().filter(|(i, _)| !axes.contains(i)).map(|(_, &d)| d).collect()
    };
    (sums.into_iter().map(|s| s / count as f64).collect(), out_shape)
}

pub fn pad(x: &[f64], shape: &[usize], pads: &[[usize; 2]]) -> (Vec<f64>, Vec<usize>) {
    let out_shape: Vec<usize> = shape.iter().zip(pads).map(|(&d, p)| d + p[0] + p[1]).collect();
    let os = strides_of(&out_shape);
    let mut out = vec![0.0; out_shape.iter().product()];
    for (i, &v) in x.iter().enumerate() {
        let j: usize = unravel(i, shape).iter().enumerate().map(|(d, &ix)| (ix + pads[d][0]) * os[d]).sum();
        out[j] = v;
    }
    (out, out_shape)
}

/// Trailing-axis broadcast of `a op b`.
pub fn broadcast(a: &[f64], ash: &[usize], b: &[f64], bsh: &[usize], op: impl Fn(f64, f64) -> f64) -> (Vec<f64>, Vec<usize>) {
    let rank = ash.len().max(bsh.len());
    let pad_to = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad_to(ash), pad_to(bsh));
    let out_shape: Vec<usize> = pa.iter().zip(&pb).map(|(&x, &y)| x.max(y)).collect();
    let (sa, sb) = (strides_of(&pa), strides_of(&pb));
    let out = (0..out_shape.iter().product())
        .map(|i| {
            let idx = unravel(i, &out_shape);
            let ia: usize = idx.iter().enumerate().map(|(d, &v)| if pa[d] == 1 { 0 } else { v * sa[d] }).sum();
            let ib: usize = idx.iter().enumerate().map(|(d, &v)| if pb[d] == 1 { 0 } else { v * sb[d] }).sum();
            op(a[ia], b[ib])
        })
        .collect();
    (out, out_shape)
}

pub fn relu6(x: f64) -> f64 {
    x.clamp(0.0, 6.0)
}

/// `max|a - b| / max|b|`, the tensor-wise relative error.
pub fn rel_err(actual: &[f32], expected: &[f64]) -> f64 {
    assert_eq!(actual.len(), expected.len(), "length mismatch");
    let diff = actual.iter().zip(expected).map(|(&a, &e)| (f64::from(a) - e).abs()).fold(0.0, f64::max);
    let scale = expected.iter().map(|e| e.abs()).fold(0.0, f64::max);
    if scale == 0.0 { diff } else { diff / scale }
}

pub struct Case {
    pub bundle: ModelBundle,
    pub input: Tensor,
    pub expected: Vec<f64>,
    pub shape: Vec<usize>,
    pub label: String,
}

fn values(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn wide(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn meta() -> Metadata {
    Metadata::new("oracle", Variant::Fp32, PreprocessSpec::new(1, 1, ValueRange::ZeroOne))
}

/// One randomized single-op graph with its oracle output.
pub fn random_case(op: OpKind, rng: &mut ChaCha8Rng) -> Case {
    let mut g = GraphBuilder::new();
    let (xshape, expected, shape, label);
    let xv;
    match op {
        OpKind::Conv2D | OpKind::DepthwiseConv2D => {
            let xs = [rng.random_range(1..3), rng.random_range(3..8), rng.random_range(3..8), rng.random_range(1..5)];
            let (kh, kw) = (rng.random_range(1..4), rng.random_range(1..4));
            let stride = [rng.random_range(1..3), rng.random_range(1..3)];
            let same = rng.random_bool(0.5);
            let last = if op == OpKind::Conv2D { rng.random_range(1..6) } else { rng.random_range(1..3) };
            let ks = [kh, kw, xs[3], last];
            xv = values(rng, xs.iter().product(), -2.0, 2.0);
            let kv = values(rng, ks.iter().product(), -1.0, 1.0);
            let f = if op == OpKind::Conv2D { conv2d } else { depthwise };
            (expected, shape) = f(&wide(&xv), xs, &wide(&kv), ks, stride, same);
            xshape = xs.to_vec();
            label = format!("x{xs:?} k{ks:?} s{stride:?} same={same}");
            g.input("x", xshape.clone());
            let k = g.constant("k", Tensor::from_f32(ks.to_vec(), kv).unwrap());
            let padding = if same { Padding::Same } else { Padding::Valid };
            g.op("y", op, &["x", &k], Attrs::conv(stride, padding));
        }
        OpKind::MatMul => {
            let (n, f, o) = (rng.random_range(1..5), rng.random_range(1..17), rng.random_range(1..9));
            xv = values(rng, n * f, -2.0, 2.0);
            let wv = values(rng, f * o, -1.0, 1.0);
            expected = matmul(&wide(&xv), n, f, &wide(&wv), o);
            shape = vec![n, o];
            xshape = vec![n, f];
            label = format!("{n}x{f} @ {f}x{o}");
            g.input("x", xshape.clone());
            let w = g.constant("w", Tensor::from_f32(vec![f, o], wv).unwrap());
            g.op("y", op, &["x", &w], Attrs::default());
        }
        OpKind::Mean => {
            let rank = rng.random_range(2..5);
            xshape = (0..rank).map(|_| rng.random_range(1..6)).collect();
            let mut axes: Vec<usize> = (0..rank).filter(|_| rng.random_bool(0.5)).collect();
            if axes.is_empty() {
                axes.push(rng.random_range(0..rank));
            }
            let keep = rng.random_bool(0.5);
            xv = values(rng, xshape.iter().product(), -3.0, 3.0);
            (expected, shape) = mean(&wide(&xv), &xshape, &axes, keep);
            label = format!("{xshape:?} axes {axes:?} keep={keep}");
            g.input("x", xshape.clone());
            g.op("y", op, &["x"], Attrs::mean(axes, keep));
        }
        OpKind::Pad => {
            let rank = rng.random_range(1..5);
            xshape = (0..rank).map(|_| rng.random_range(1..5)).collect();
            let pads: Vec<[usize; 2]> = (0..rank).map(|_| [rng.random_range(0..3), rng.random_range(0..3)]).collect();
            xv = values(rng, xshape.iter().product(), -3.0, 3.0);
            (expected, shape) = pad(&wide(&xv), &xshape, &pads);
            label = format!("{xshape:?} pads {pads:?}");
            g.input("x", xshape.clone());
            g.op("y", op, &["x"], Attrs::pad(pads));
        }
        OpKind::AddV2 | OpKind::Mul => {
            let rank = rng.random_range(1..5);
            xshape = (0..rank).map(|_| rng.random_range(1..5)).collect();
            // Supported forms: same shape, single element, last-axis vector.
            let cshape: Vec<usize> = match rng.random_range(0..4) {
                0 => xshape.clone(),
                1 => vec![],
                2 => vec![1],
                _ => vec![xshape[rank - 1]],
            };
            xv = values(rng, xshape.iter().product(), -3.0, 3.0);
            let cv = values(rng, cshape.iter().product(), -3.0, 3.0);
            let f: fn(f64, f64) -> f64 = if op == OpKind::AddV2 { |a, b| a + b } else { |a, b| a * b };
            (expected, shape) = broadcast(&wide(&xv), &xshape, &wide(&cv), &cshape, f);
            label = format!("{xshape:?} with {cshape:?}");
            g.input("x", xshape.clone());
            let c = g.constant("c", Tensor::from_f32(cshape, cv).unwrap());
            g.op("y", op, &["x", &c], Attrs::default());
        }
        OpKind::Relu6 => {
            xshape = vec![rng.random_range(1..4), rng.random_range(1..20)];
            xv = values(rng, xshape.iter().product(), -4.0, 10.0);
            expected = xv.iter().map(|&v| relu6(f64::from(v))).collect();
            shape = xshape.clone();
            label = format!("{xshape:?}");
            g.input("x", xshape.clone());
            g.op("y", op, &["x"], Attrs::default());
        }
        other => panic!("no oracle for {other:?}"),
    }
    g.output("y");
    Case {
        bundle: g.build(meta()).unwrap(),
        input: Tensor::from_f32(xshape, xv).unwrap(),
        expected,
        shape,
        label,
    }
}
