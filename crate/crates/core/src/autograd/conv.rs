//! Convolution kernels (im2col + GEMM) and their adjoints.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_len(&self, input: usize) -> usize {
        (input + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Output length of the transposed convolution with `output_padding`.
    pub fn transposed_len(&self, input: usize, output_padding: usize) -> usize {
        (input - 1) * self.stride + self.kernel + output_padding - 2 * self.pad
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold one `[c, h, w]` image into a `(c·k·k) × (ho·wo)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let k = g.kernel;
    let plane = ho * wo;
    for ch in 0..c {
        let xc = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &xc[ih as usize * w..(ih as usize + 1) * w];
                    for (ow, d) in drow.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *d = if iw < 0 || iw >= w as isize { T::zero() } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `[c, h, w]` image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    let k = g.kernel;
    let plane = ho * wo;
    for ch in 0..c {
        let xc = &mut x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst = &mut xc[ih as usize * w..(ih as usize + 1) * w];
                    for (ow, &s) in src[oh * wo..(oh + 1) * wo].iter().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[iw as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (co, &b) in bias.iter().enumerate() {
        for v in &mut out[co * plane..(co + 1) * plane] {
            *v += b;
        }
    }
}

/// `x: [n, cin, h, w]`, `weight: [cout, cin, k, k]`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Tensor<T> {
    let (n, cin, h, w) = x.dims4();
    let cout = weight.shape()[0];
    let (ho, wo) = (g.out_len(h), g.out_len(w));
    let plane = ho * wo;
    let kk = cin * g.kernel * g.kernel;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * plane] };
    for s in 0..n {
        let xs = x.sample(s);
        let colref: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, cin, h, w, g, ho, wo, &mut cols);
            &cols
        };
        let os = &mut out.data_mut()[s * cout * plane..(s + 1) * cout * plane];
        T::gemm(cout, kk, plane, weight.data(), (kk as isize, 1), colref, (plane as isize, 1), T::zero(), os, (plane as isize, 1));
        if let Some(b) = bias {
            add_bias(os, b.data(), plane);
        }
    }
    out
}

pub struct ConvGrads<T> {
    pub x: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gy: &Tensor<T>,
    g: ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (n, cin, h, w) = x.dims4();
    let (_, cout, ho, wo) = gy.dims4();
    let plane = ho * wo;
    let kk = cin * g.kernel * g.kernel;
    let mut gx = need.0.then(|| Tensor::zeros(x.shape()));
    let mut gw = need.1.then(|| Tensor::zeros(weight.shape()));
    let mut gb = need.2.then(|| Tensor::zeros(&[cout]));
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { kk * plane }];
    let mut gcols = vec![T::zero(); if need.0 && !g.is_pointwise() { kk * plane } else { 0 }];
    for s in 0..n {
        let gys = gy.sample(s);
        if let Some(gw) = gw.as_mut() {
            let xs = x.sample(s);
            let colref: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, cin, h, w, g, ho, wo, &mut cols);
                &cols
            };
            // gw += gy · colsᵀ
            T::gemm(cout, plane, kk, gys, (plane as isize, 1), colref, (1, plane as isize), T::one(), gw.data_mut(), (kk as isize, 1));
        }
        if let Some(gb) = gb.as_mut() {
            for (co, b) in gb.data_mut().iter_mut().enumerate() {
                *b += gys[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
            }
        }
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx.data_mut()[s * cin * h * w..(s + 1) * cin * h * w];
            if g.is_pointwise() {
                T::gemm(kk, cout, plane, weight.data(), (1, kk as isize), gys, (plane as isize, 1), T::one(), gxs, (plane as isize, 1));
            } else {
                T::gemm(kk, cout, plane, weight.data(), (1, kk as isize), gys, (plane as isize, 1), T::zero(), &mut gcols, (plane as isize, 1));
                col2im(&gcols, cin, h, w, g, ho, wo, gxs);
            }
        }
    }
    ConvGrads { x: gx, weight: gw, bias: gb }
}

/// `x: [n, cin, h, w]`, `weight: [cin, cout, k, k]` (transposed-conv layout).
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeom,
    output_padding: usize,
) -> Tensor<T> {
    let (n, cin, h, w) = x.dims4();
    let cout = weight.shape()[1];
    let (ho, wo) = (g.transposed_len(h, output_padding), g.transposed_len(w, output_padding));
    let plane_in = h * w;
    let kk = cout * g.kernel * g.kernel;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let mut cols = vec![T::zero(); kk * plane_in];
    for s in 0..n {
        let xs = x.sample(s);
        // cols = Wᵀ · x
        T::gemm(kk, cin, plane_in, weight.data(), (1, kk as isize), xs, (plane_in as isize, 1), T::zero(), &mut cols, (plane_in as isize, 1));
        let os = &mut out.data_mut()[s * cout * ho * wo..(s + 1) * cout * ho * wo];
        col2im(&cols, cout, ho, wo, g, h, w, os);
        if let Some(b) = bias {
            add_bias(os, b.data(), ho * wo);
        }
    }
    out
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gy: &Tensor<T>,
    g: ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (n, cin, h, w) = x.dims4();
    let (_, cout, ho, wo) = gy.dims4();
    let plane_in = h * w;
    let kk = cout * g.kernel * g.kernel;
    let mut gx = need.0.then(|| Tensor::zeros(x.shape()));
    let mut gw = need.1.then(|| Tensor::zeros(weight.shape()));
    let mut gb = need.2.then(|| Tensor::zeros(&[cout]));
    let mut gcols = vec![T::zero(); kk * plane_in];
    for s in 0..n {
        let gys = gy.sample(s);
        if need.0 || need.1 {
            im2col(gys, cout, ho, wo, g, h, w, &mut gcols);
        }
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx.data_mut()[s * cin * plane_in..(s + 1) * cin * plane_in];
            T::gemm(cin, kk, plane_in, weight.data(), (kk as isize, 1), &gcols, (plane_in as isize, 1), T::zero(), gxs, (plane_in as isize, 1));
        }
        if let Some(gw) = gw.as_mut() {
            let xs = x.sample(s);
            T::gemm(cin, plane_in, kk, xs, (plane_in as isize, 1), &gcols, (1, plane_in as isize), T::one(), gw.data_mut(), (kk as isize, 1));
        }
        if let Some(gb) = gb.as_mut() {
            let plane = ho * wo;
            for (co, b) in gb.data_mut().iter_mut().enumerate() {
                *b += gys[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
            }
        }
    }
    ConvGrads { x: gx, weight: gw, bias: gb }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(x: &Tensor<f64>, wt: &Tensor<f64>, g: ConvGeom) -> Tensor<f64> {
        let (n, cin, h, w) = x.dims4();
        let cout = wt.shape()[0];
        let k = g.kernel;
        let (ho, wo) = (g.out_len(h), g.out_len(w));
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        for s in 0..n {
            for co in 0..cout {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                                    let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < w {
                                        acc += x.data()[((s * cin + ci) * h + ih as usize) * w + iw as usize]
                                            * wt.data()[((co * cin + ci) * k + ki) * k + kj];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((s * cout + co) * ho + oh) * wo + ow] = acc;
                    }
                }
            }
        }
        out
    }

    fn direct_conv_t(x: &Tensor<f64>, wt: &Tensor<f64>, g: ConvGeom, op: usize) -> Tensor<f64> {
        let (n, cin, h, w) = x.dims4();
        let cout = wt.shape()[1];
        let k = g.kernel;
        let (ho, wo) = (g.transposed_len(h, op), g.transposed_len(w, op));
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        for s in 0..n {
            for ci in 0..cin {
                for ih in 0..h {
                    for iw in 0..w {
                        let v = x.data()[((s * cin + ci) * h + ih) * w + iw];
                        for co in 0..cout {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let oh = (ih * g.stride + ki) as isize - g.pad as isize;
                                    let ow = (iw * g.stride + kj) as isize - g.pad as isize;
                                    if oh >= 0 && ow >= 0 && (oh as usize) < ho && (ow as usize) < wo {
                                        out.data_mut()[((s * cout + co) * ho + oh as usize) * wo + ow as usize] +=
                                            v * wt.data()[((ci * cout + co) * k + ki) * k + kj];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + seed) * 0.7311).sin())
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (5, 2, 2), (1, 1, 0)] {
            let g = ConvGeom { kernel: k, stride: s, pad: p };
            let x = pseudo(&[2, 3, 7, 6], 0.3);
            let wt = pseudo(&[4, 3, k, k], 1.7);
            let fast = conv2d_forward(&x, &wt, None, g);
            let slow = direct_conv(&x, &wt, g);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn conv_transpose_matches_direct_loops() {
        for &(k, s, p, op) in &[(3, 2, 1, 1), (5, 2, 2, 1), (3, 1, 1, 0)] {
            let g = ConvGeom { kernel: k, stride: s, pad: p };
            let x = pseudo(&[2, 3, 4, 5], 0.9);
            let wt = pseudo(&[3, 2, k, k], 2.2);
            let fast = conv_transpose2d_forward(&x, &wt, None, g, op);
            let slow = direct_conv_t(&x, &wt, g, op);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn stride_two_transposed_doubles_size() {
        let g = ConvGeom { kernel: 3, stride: 2, pad: 1 };
        assert_eq!(g.transposed_len(8, 1), 16);
        let g5 = ConvGeom { kernel: 5, stride: 2, pad: 2 };
        assert_eq!(g5.transposed_len(8, 1), 16);
        assert_eq!(g5.out_len(16), 8);
    }
}
