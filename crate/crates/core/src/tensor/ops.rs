//! Differentiable operations.
//!
//! Each op validates shapes, computes the forward value, and registers a
//! backward closure producing one gradient buffer per parent. Convolution is
//! lowered to GEMM through an im2col buffer; everything else is plain loops.
//!
//! Backward closures read parent data through the captured handles, so
//! parameters must not be mutated between forward and backward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

use super::{Element, Tensor};

/// Output extent of a convolution along one axis, if positive.
pub fn conv_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * padding;
    if padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

struct ConvDims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn resolve(
        input: &[usize],
        weight: &[usize],
        bias: &[usize],
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d expects input B×Cin×H×W and weight Cout×Cin×kh×kw, got input {input:?}, weight {weight:?}"
            )));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::InvalidArg(format!(
                "conv2d stride and dilation must be >= 1, got stride {stride}, dilation {dilation}"
            )));
        }
        let (batch, cin, h, w) = (input[0], input[1], input[2], input[3]);
        let (cout, wcin, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if cin != wcin {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input has Cin={cin} but weight {weight:?} expects Cin={wcin}"
            )));
        }
        if bias != [cout] {
            return Err(Error::Shape(format!(
                "conv2d bias must have shape [{cout}], got {bias:?}"
            )));
        }
        let oh = conv_output_size(h, kh, stride, padding, dilation);
        let ow = conv_output_size(w, kw, stride, padding, dilation);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::Shape(format!(
                "conv2d kernel {kh}×{kw} (dilation {dilation}) does not fit {h}×{w} input with padding {padding}"
            )));
        };
        Ok(ConvDims { batch, cin, h, w, cout, kh, kw, stride, dilation, padding, oh, ow })
    }

    fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }
}

/// Gather the windows under every output position into a col matrix of shape
/// (Cin·kh·kw) × (oh·ow), row-major. Out-of-image taps read as zero.
fn im2col<E: Element>(x: &[E], d: &ConvDims, col: &mut [E]) {
    debug_assert_eq!(x.len(), d.cin * d.h * d.w);
    debug_assert_eq!(col.len(), d.col_rows() * d.out_pixels());
    let n = d.out_pixels();
    let mut row = 0;
    for ci in 0..d.cin {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let dst = &mut col[row * n..(row + 1) * n];
                let mut idx = 0;
                for oh in 0..d.oh {
                    let ih = (oh * d.stride + ki * d.dilation) as isize - d.padding as isize;
                    if ih < 0 || ih >= d.h as isize {
                        for _ in 0..d.ow {
                            dst[idx] = E::zero();
                            idx += 1;
                        }
                        continue;
                    }
                    let src_row = &plane[ih as usize * d.w..(ih as usize + 1) * d.w];
                    for ow in 0..d.ow {
                        let iw = (ow * d.stride + kj * d.dilation) as isize - d.padding as isize;
                        dst[idx] = if iw < 0 || iw >= d.w as isize {
                            E::zero()
                        } else {
                            src_row[iw as usize]
                        };
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add of a col-matrix gradient back onto the input image.
fn col2im_add<E: Element>(col: &[E], d: &ConvDims, dx: &mut [E]) {
    let n = d.out_pixels();
    let mut row = 0;
    for ci in 0..d.cin {
        let plane_off = ci * d.h * d.w;
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let src = &col[row * n..(row + 1) * n];
                let mut idx = 0;
                for oh in 0..d.oh {
                    let ih = (oh * d.stride + ki * d.dilation) as isize - d.padding as isize;
                    if ih < 0 || ih >= d.h as isize {
                        idx += d.ow;
                        continue;
                    }
                    let row_off = plane_off + ih as usize * d.w;
                    for ow in 0..d.ow {
                        let iw = (ow * d.stride + kj * d.dilation) as isize - d.padding as isize;
                        if iw >= 0 && iw < d.w as isize {
                            let p = row_off + iw as usize;
                            dx[p] = dx[p] + src[idx];
                        }
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// True when the col matrix would be the input itself (pointwise conv).
fn is_pointwise(d: &ConvDims) -> bool {
    d.kh == 1 && d.kw == 1 && d.stride == 1 && d.padding == 0
}

/// 2-D convolution with zero padding.
///
/// `input` B×Cin×H×W, `weight` Cout×Cin×kh×kw, `bias` [Cout]. Output is
/// B×Cout×oh×ow with `oh = (H + 2·padding − dilation·(kh−1) − 1)/stride + 1`.
pub fn conv2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let d = ConvDims::resolve(input.shape(), weight.shape(), bias.shape(), stride, dilation, padding)?;
    let n = d.out_pixels();
    let image = d.cin * d.h * d.w;
    let mut out = vec![E::zero(); d.batch * d.cout * n];

    {
        let x = input.data_ref();
        let w = weight.data_ref();
        let b = bias.data_ref();
        let mut col = if is_pointwise(&d) { Vec::new() } else { vec![E::zero(); d.col_rows() * n] };
        for bi in 0..d.batch {
            let xb = &x[bi * image..(bi + 1) * image];
            let cb = if is_pointwise(&d) {
                xb
            } else {
                im2col(xb, &d, &mut col);
                col.as_slice()
            };
            let ob = &mut out[bi * d.cout * n..(bi + 1) * d.cout * n];
            E::gemm(
                d.cout, d.col_rows(), n,
                E::one(),
                &w, d.col_rows() as isize, 1,
                cb, n as isize, 1,
                E::zero(),
                ob,
            );
            for co in 0..d.cout {
                let bv = b[co];
                for v in &mut ob[co * n..(co + 1) * n] {
                    *v = *v + bv;
                }
            }
        }
    }

    let shape = vec![d.batch, d.cout, d.oh, d.ow];
    let (xin, win) = (input.clone(), weight.clone());
    let needs = [input.requires_grad(), weight.requires_grad(), bias.requires_grad()];
    Ok(Tensor::from_op(
        shape,
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |grad_out| {
            let x = xin.data_ref();
            let w = win.data_ref();
            let mut dx = needs[0].then(|| vec![E::zero(); x.len()]);
            let mut dw = needs[1].then(|| vec![E::zero(); w.len()]);
            let mut db = needs[2].then(|| vec![E::zero(); d.cout]);

            if let Some(db) = db.as_mut() {
                for bi in 0..d.batch {
                    for co in 0..d.cout {
                        let g = &grad_out[(bi * d.cout + co) * n..(bi * d.cout + co + 1) * n];
                        let mut acc = E::zero();
                        for v in g {
                            acc = acc + *v;
                        }
                        db[co] = db[co] + acc;
                    }
                }
            }

            if dx.is_some() || dw.is_some() {
                let mut col = if is_pointwise(&d) { Vec::new() } else { vec![E::zero(); d.col_rows() * n] };
                let mut dcol = vec![E::zero(); d.col_rows() * n];
                for bi in 0..d.batch {
                    let xb = &x[bi * image..(bi + 1) * image];
                    let gb = &grad_out[bi * d.cout * n..(bi + 1) * d.cout * n];
                    if let Some(dw) = dw.as_mut() {
                        let cb = if is_pointwise(&d) {
                            xb
                        } else {
                            im2col(xb, &d, &mut col);
                            col.as_slice()
                        };
                        // dW += dY · colᵀ
                        E::gemm(
                            d.cout, n, d.col_rows(),
                            E::one(),
                            gb, n as isize, 1,
                            cb, 1, n as isize,
                            E::one(),
                            dw,
                        );
                    }
                    if let Some(dx) = dx.as_mut() {
                        // dcol = Wᵀ · dY, then scatter back onto the image.
                        E::gemm(
                            d.col_rows(), d.cout, n,
                            E::one(),
                            &w, 1, d.col_rows() as isize,
                            gb, n as isize, 1,
                            E::zero(),
                            &mut dcol,
                        );
                        let dxb = &mut dx[bi * image..(bi + 1) * image];
                        if is_pointwise(&d) {
                            for (t, s) in dxb.iter_mut().zip(&dcol) {
                                *t = *t + *s;
                            }
                        } else {
                            col2im_add(&dcol, &d, dxb);
                        }
                    }
                }
            }
            vec![dx, dw, db]
        }),
    ))
}

fn unary<E: Element>(
    x: &Tensor<E>,
    data: Vec<E>,
    backward: impl Fn(&[E]) -> Vec<E> + Send + Sync + 'static,
) -> Tensor<E> {
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |g| vec![Some(backward(g))]),
    )
}

impl<E: Element> Tensor<E> {
    /// max(x, 0) + slope·min(x, 0)
    pub fn leaky_relu(&self, slope: f64) -> Tensor<E> {
        let s = E::of_f64(slope);
        let data = self.data_ref().iter().map(|&v| if v >= E::zero() { v } else { v * s }).collect();
        let xin = self.clone();
        unary(self, data, move |g| {
            let x = xin.data_ref();
            g.iter().zip(x.iter()).map(|(&gi, &xi)| if xi >= E::zero() { gi } else { gi * s }).collect()
        })
    }

    pub fn tanh(&self) -> Tensor<E> {
        let y: Vec<E> = self.data_ref().iter().map(|v| v.tanh()).collect();
        let saved = y.clone();
        unary(self, y, move |g| {
            g.iter().zip(saved.iter()).map(|(&gi, &yi)| gi * (E::one() - yi * yi)).collect()
        })
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        let one = E::one();
        let y: Vec<E> = self.data_ref().iter().map(|&v| one / (one + (-v).exp())).collect();
        let saved = y.clone();
        unary(self, y, move |g| {
            g.iter().zip(saved.iter()).map(|(&gi, &yi)| gi * yi * (E::one() - yi)).collect()
        })
    }

    /// x·a + b
    pub fn affine(&self, a: f64, b: f64) -> Tensor<E> {
        let (ae, be) = (E::of_f64(a), E::of_f64(b));
        let data = self.data_ref().iter().map(|&v| v * ae + be).collect();
        unary(self, data, move |g| g.iter().map(|&gi| gi * ae).collect())
    }

    pub fn abs(&self) -> Tensor<E> {
        let data = self.data_ref().iter().map(|v| v.abs()).collect();
        let xin = self.clone();
        // Subgradient 0 at x == 0.
        unary(self, data, move |g| {
            let x = xin.data_ref();
            g.iter()
                .zip(x.iter())
                .map(|(&gi, &xi)| {
                    if xi > E::zero() {
                        gi
                    } else if xi < E::zero() {
                        -gi
                    } else {
                        E::zero()
                    }
                })
                .collect()
        })
    }

    pub fn square(&self) -> Tensor<E> {
        let data = self.data_ref().iter().map(|&v| v * v).collect();
        let xin = self.clone();
        let two = E::of_f64(2.0);
        unary(self, data, move |g| {
            let x = xin.data_ref();
            g.iter().zip(x.iter()).map(|(&gi, &xi)| gi * two * xi).collect()
        })
    }

    /// Natural log. The caller is responsible for keeping inputs positive
    /// (loss code clamps probabilities first).
    pub fn ln(&self) -> Tensor<E> {
        let data = self.data_ref().iter().map(|v| v.ln()).collect();
        let xin = self.clone();
        unary(self, data, move |g| {
            let x = xin.data_ref();
            g.iter().zip(x.iter()).map(|(&gi, &xi)| gi / xi).collect()
        })
    }

    /// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<E> {
        let (le, he) = (E::of_f64(lo), E::of_f64(hi));
        let data = self
            .data_ref()
            .iter()
            .map(|&v| if v < le { le } else if v > he { he } else { v })
            .collect();
        let xin = self.clone();
        unary(self, data, move |g| {
            let x = xin.data_ref();
            g.iter()
                .zip(x.iter())
                .map(|(&gi, &xi)| if xi > le && xi < he { gi } else { E::zero() })
                .collect()
        })
    }

    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.check_same_shape(other, "add")?;
        let data = self.data_ref().iter().zip(other.data_ref().iter()).map(|(&a, &b)| a + b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.check_same_shape(other, "sub")?;
        let data = self.data_ref().iter().zip(other.data_ref().iter()).map(|(&a, &b)| a - b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]
            }),
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.check_same_shape(other, "mul")?;
        let data = self.data_ref().iter().zip(other.data_ref().iter()).map(|(&a, &b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ad = a.data_ref();
                let bd = b.data_ref();
                vec![
                    Some(g.iter().zip(bd.iter()).map(|(&gi, &bi)| gi * bi).collect()),
                    Some(g.iter().zip(ad.iter()).map(|(&gi, &ai)| gi * ai).collect()),
                ]
            }),
        ))
    }

    /// Mean over all elements, as a scalar tensor.
    pub fn mean(&self) -> Tensor<E> {
        let n = self.numel().max(1);
        let inv = E::of_f64(1.0 / n as f64);
        let mut acc = E::zero();
        for &v in self.data_ref().iter() {
            acc = acc + v;
        }
        Tensor::from_op(
            vec![],
            vec![acc * inv],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0] * inv; n])]),
        )
    }

    /// Sum over all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor<E> {
        let n = self.numel();
        let mut acc = E::zero();
        for &v in self.data_ref().iter() {
            acc = acc + v;
        }
        Tensor::from_op(
            vec![],
            vec![acc],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    fn check_same_shape(&self, other: &Tensor<E>, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{op} requires equal shapes, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Channel slice [start, end) of a B×C×H×W tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor<E>> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(Error::Shape(format!("slice_channels expects B×C×H×W, got {shape:?}")));
        }
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if start >= end || end > c {
            return Err(Error::InvalidArg(format!(
                "channel slice [{start}, {end}) out of range for C={c}"
            )));
        }
        let hw = h * w;
        let cs = end - start;
        let mut out = Vec::with_capacity(b * cs * hw);
        {
            let x = self.data_ref();
            for bi in 0..b {
                let base = bi * c * hw;
                out.extend_from_slice(&x[base + start * hw..base + end * hw]);
            }
        }
        let numel = self.numel();
        Ok(Tensor::from_op(
            vec![b, cs, h, w],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![E::zero(); numel];
                for bi in 0..b {
                    let src = &g[bi * cs * hw..(bi + 1) * cs * hw];
                    let dst = &mut dx[bi * c * hw + start * hw..bi * c * hw + end * hw];
                    for (t, s) in dst.iter_mut().zip(src) {
                        *t = *s;
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Per-plane normalization: every (batch, channel) plane is shifted to
    /// mean 0 and scaled to unit variance with its own statistics, then
    /// transformed by per-channel gain and shift. Behaves identically in
    /// training and inference.
    pub fn instance_norm(&self, gain: &Tensor<E>, shift: &Tensor<E>, epsilon: f64) -> Result<Tensor<E>> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(Error::Shape(format!("instance_norm expects B×C×H×W, got {shape:?}")));
        }
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if gain.shape() != [c] || shift.shape() != [c] {
            return Err(Error::Shape(format!(
                "instance_norm gain/shift must have shape [{c}], got {:?} and {:?}",
                gain.shape(),
                shift.shape()
            )));
        }
        let hw = h * w;
        let eps = E::of_f64(epsilon);
        let inv_hw = E::of_f64(1.0 / hw as f64);

        let mut xhat = vec![E::zero(); b * c * hw];
        let mut inv_std = vec![E::zero(); b * c];
        let mut out = vec![E::zero(); b * c * hw];
        {
            let x = self.data_ref();
            let gd = gain.data_ref();
            let sd = shift.data_ref();
            for bi in 0..b {
                for ci in 0..c {
                    let off = (bi * c + ci) * hw;
                    let plane = &x[off..off + hw];
                    let mut mean = E::zero();
                    for &v in plane {
                        mean = mean + v;
                    }
                    mean = mean * inv_hw;
                    let mut var = E::zero();
                    for &v in plane {
                        let dv = v - mean;
                        var = var + dv * dv;
                    }
                    var = var * inv_hw;
                    let istd = E::one() / (var + eps).sqrt();
                    inv_std[bi * c + ci] = istd;
                    for (i, &v) in plane.iter().enumerate() {
                        let xh = (v - mean) * istd;
                        xhat[off + i] = xh;
                        out[off + i] = xh * gd[ci] + sd[ci];
                    }
                }
            }
        }

        let needs = [self.requires_grad(), gain.requires_grad(), shift.requires_grad()];
        let gain_in = gain.clone();
        Ok(Tensor::from_op(
            shape.to_vec(),
            out,
            vec![self.clone(), gain.clone(), shift.clone()],
            Box::new(move |g| {
                let gd = gain_in.data_ref();
                let mut dx = needs[0].then(|| vec![E::zero(); b * c * hw]);
                let mut dgain = needs[1].then(|| vec![E::zero(); c]);
                let mut dshift = needs[2].then(|| vec![E::zero(); c]);
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * hw;
                        let gp = &g[off..off + hw];
                        let xh = &xhat[off..off + hw];
                        if let Some(dgain) = dgain.as_mut() {
                            let mut acc = E::zero();
                            for (gi, xi) in gp.iter().zip(xh) {
                                acc = acc + *gi * *xi;
                            }
                            dgain[ci] = dgain[ci] + acc;
                        }
                        if let Some(dshift) = dshift.as_mut() {
                            let mut acc = E::zero();
                            for gi in gp {
                                acc = acc + *gi;
                            }
                            dshift[ci] = dshift[ci] + acc;
                        }
                        if let Some(dx) = dx.as_mut() {
                            // d/dx of (x − μ)·istd with μ, istd functions of x.
                            let istd = inv_std[bi * c + ci];
                            let gc = gd[ci];
                            let mut sum_g = E::zero();
                            let mut sum_gx = E::zero();
                            for (gi, xi) in gp.iter().zip(xh) {
                                let gh = *gi * gc;
                                sum_g = sum_g + gh;
                                sum_gx = sum_gx + gh * *xi;
                            }
                            let mean_g = sum_g * inv_hw;
                            let mean_gx = sum_gx * inv_hw;
                            for i in 0..hw {
                                let gh = gp[i] * gc;
                                dx[off + i] = (gh - mean_g - xh[i] * mean_gx) * istd;
                            }
                        }
                    }
                }
                vec![dx, dgain, dshift]
            }),
        ))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by 1/(1−rate); in
    /// inference mode this is the identity. The mask is a pure function of
    /// the seed.
    pub fn dropout(&self, rate: f64, training: bool, seed: u64) -> Result<Tensor<E>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArg(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            // Identity, but still a graph node so gradients flow.
            let data = self.to_vec();
            return Ok(unary(self, data, |g| g.to_vec()));
        }
        let scale = E::of_f64(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<E> = (0..self.numel())
            .map(|_| if rng.random::<f64>() < rate { E::zero() } else { scale })
            .collect();
        let data = self.data_ref().iter().zip(mask.iter()).map(|(&x, &m)| x * m).collect();
        Ok(unary(self, data, move |g| {
            g.iter().zip(mask.iter()).map(|(&gi, &mi)| gi * mi).collect()
        }))
    }

    /// Concatenate along the channel axis. All inputs must agree on batch,
    /// height and width; the gradient splits back to the inputs.
    pub fn concat_channels(xs: &[Tensor<E>]) -> Result<Tensor<E>> {
        if xs.is_empty() {
            return Err(Error::InvalidArg("concat_channels on empty list".into()));
        }
        let first = xs[0].shape();
        if first.len() != 4 {
            return Err(Error::Shape(format!("concat_channels expects B×C×H×W, got {first:?}")));
        }
        let (b, h, w) = (first[0], first[2], first[3]);
        let mut channels = Vec::with_capacity(xs.len());
        for x in xs {
            let s = x.shape();
            if s.len() != 4 || s[0] != b || s[2] != h || s[3] != w {
                return Err(Error::Shape(format!(
                    "concat_channels spatial/batch mismatch: {first:?} vs {s:?}"
                )));
            }
            channels.push(s[1]);
        }
        let ctot: usize = channels.iter().sum();
        let hw = h * w;
        let mut out = vec![E::zero(); b * ctot * hw];
        for bi in 0..b {
            let mut coff = 0;
            for (x, &ck) in xs.iter().zip(&channels) {
                let xd = x.data_ref();
                let src = &xd[bi * ck * hw..(bi + 1) * ck * hw];
                let dst = &mut out[bi * ctot * hw + coff * hw..bi * ctot * hw + (coff + ck) * hw];
                dst.copy_from_slice(src);
                coff += ck;
            }
        }
        let split = channels.clone();
        Ok(Tensor::from_op(
            vec![b, ctot, h, w],
            out,
            xs.to_vec(),
            Box::new(move |g| {
                let mut grads: Vec<Option<Vec<E>>> = split.iter().map(|&ck| Some(vec![E::zero(); b * ck * hw])).collect();
                for bi in 0..b {
                    let mut coff = 0;
                    for (k, &ck) in split.iter().enumerate() {
                        let gsrc = &g[bi * ctot * hw + coff * hw..bi * ctot * hw + (coff + ck) * hw];
                        let dst = grads[k].as_mut().unwrap();
                        dst[bi * ck * hw..(bi + 1) * ck * hw].copy_from_slice(gsrc);
                        coff += ck;
                    }
                }
                grads
            }),
        ))
    }

    /// Gaussian-initialized leaf tensor (mean 0, given standard deviation).
    pub fn randn(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<E> {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                E::of_f64(z * std)
            })
            .collect();
        Tensor::new(shape, data, false).expect("shape/data length agree by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{no_grad, Tensor};

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec(), false).unwrap()
    }

    /// Nested-loop convolution used as the independent oracle.
    fn conv2d_reference(
        x: &[f64], xs: &[usize],
        w: &[f64], ws: &[usize],
        b: &[f64],
        stride: usize, dilation: usize, padding: usize,
    ) -> (Vec<f64>, Vec<usize>) {
        let (bn, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let oh = conv_output_size(h, kh, stride, padding, dilation).unwrap();
        let ow = conv_output_size(wd, kw, stride, padding, dilation).unwrap();
        let mut out = vec![0.0; bn * cout * oh * ow];
        for bi in 0..bn {
            for co in 0..cout {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (y * stride + ki * dilation) as isize - padding as isize;
                                    let ix = (xo * stride + kj * dilation) as isize - padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x[((bi * cin + ci) * h + iy as usize) * wd + ix as usize];
                                    let wv = w[((co * cin + ci) * kh + ki) * kw + kj];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((bi * cout + co) * oh + y) * ow + xo] = acc;
                    }
                }
            }
        }
        (out, vec![bn, cout, oh, ow])
    }

    #[test]
    fn conv_center_value_matches_hand_sum() {
        // 3×3 all-ones kernel over [[1..9]] grid: center output is the full sum 45.
        let x = t64(&[1, 1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let b = Tensor::<f64>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.to_vec()[4], 45.0);
        let (r, _) = conv2d_reference(
            &x.to_vec(), &[1, 1, 3, 3],
            &w.to_vec(), &[1, 1, 3, 3],
            &b.to_vec(), 1, 1, 1,
        );
        for (a, e) in y.to_vec().iter().zip(&r) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let x = t64(&[1, 1, 2, 2], &[0.5, -1.0, 2.0, 3.0]);
        let w = Tensor::<f64>::ones(&[1, 1, 1, 1]);
        let b = Tensor::<f64>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 1, 0).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn conv_dilated_impulse_response_is_spread_cross() {
        // Impulse through an all-ones 3×3 kernel at dilation 2: nine unit taps
        // spaced 2 apart inside a 5×5 envelope.
        let mut img = vec![0.0; 49];
        img[3 * 7 + 3] = 1.0;
        let x = t64(&[1, 1, 7, 7], &img);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let b = Tensor::<f64>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 7, 7]);
        let out = y.to_vec();
        let mut ones = 0;
        for r in 0..7 {
            for c in 0..7 {
                let v = out[r * 7 + c];
                let expected = (r as isize - 3).abs() % 2 == 0
                    && (c as isize - 3).abs() % 2 == 0
                    && (r as isize - 3).abs() <= 2
                    && (c as isize - 3).abs() <= 2;
                if expected {
                    assert_eq!(v, 1.0, "expected unit tap at ({r},{c})");
                    ones += 1;
                } else {
                    assert_eq!(v, 0.0, "expected zero at ({r},{c})");
                }
            }
        }
        assert_eq!(ones, 9);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(&[2, 4, 3, 3]);
        let b = Tensor::<f64>::zeros(&[2]);
        let err = conv2d(&x, &w, &b, 1, 1, 1).unwrap_err();
        assert!(err.to_string().contains("Cin"), "got: {err}");
    }

    #[test]
    fn conv_matches_reference_on_random_configs() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (stride, dilation, padding, k) in
            [(1, 1, 0, 3), (1, 1, 1, 3), (2, 1, 1, 3), (1, 2, 2, 3), (2, 3, 2, 3), (1, 1, 0, 1), (3, 1, 4, 5)]
        {
            let (h, w) = (11, 9);
            let x: Vec<f64> = (0..2 * 3 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let wt: Vec<f64> = (0..4 * 3 * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let xt = t64(&[2, 3, h, w], &x);
            let wtt = t64(&[4, 3, k, k], &wt);
            let bt = t64(&[4], &bs);
            let y = conv2d(&xt, &wtt, &bt, stride, dilation, padding).unwrap();
            let (r, rs) = conv2d_reference(&x, &[2, 3, h, w], &wt, &[4, 3, k, k], &bs, stride, dilation, padding);
            assert_eq!(y.shape(), rs.as_slice());
            for (a, e) in y.to_vec().iter().zip(&r) {
                assert!((a - e).abs() < 1e-10, "mismatch at stride={stride} dil={dilation} pad={padding}");
            }
        }
    }

    #[test]
    fn leaky_relu_matches_elementwise_formula() {
        let x = t64(&[3], &[-1.0, 0.0, 2.0]);
        let y = x.leaky_relu(0.2);
        assert_eq!(y.to_vec(), vec![-0.2, 0.0, 2.0]);
    }

    #[test]
    fn tanh_and_sigmoid_fixed_points() {
        let z = Tensor::<f64>::zeros(&[4]);
        assert!(z.tanh().to_vec().iter().all(|&v| v == 0.0));
        assert!(z.sigmoid().to_vec().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn concat_then_slice_roundtrips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::<f64>::randn(&[2, 3, 4, 5], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[2, 2, 4, 5], 1.0, &mut rng);
        let cat = Tensor::concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(cat.shape(), &[2, 5, 4, 5]);
        assert_eq!(cat.slice_channels(0, 3).unwrap().to_vec(), a.to_vec());
        assert_eq!(cat.slice_channels(3, 5).unwrap().to_vec(), b.to_vec());
    }

    #[test]
    fn concat_channel_arithmetic() {
        let a = Tensor::<f64>::zeros(&[1, 256, 2, 2]);
        let b = Tensor::<f64>::zeros(&[1, 64, 2, 2]);
        assert_eq!(Tensor::concat_channels(&[a, b]).unwrap().shape()[1], 320);
        let h = Tensor::<f64>::zeros(&[1, 256, 2, 2]);
        let t = Tensor::<f64>::zeros(&[1, 256, 2, 2]);
        assert_eq!(Tensor::concat_channels(&[h, t]).unwrap().shape()[1], 512);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let b = Tensor::<f64>::zeros(&[1, 2, 4, 5]);
        assert!(Tensor::concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn instance_norm_constant_plane_maps_to_shift() {
        let x = Tensor::<f64>::full(&[1, 1, 2, 2], 7.0);
        let y = x.instance_norm(&Tensor::ones(&[1]), &Tensor::zeros(&[1]), 1e-5).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
        let y5 = x
            .instance_norm(&Tensor::zeros(&[1]), &Tensor::full(&[1], 5.0), 1e-5)
            .unwrap();
        assert!(y5.to_vec().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn instance_norm_standardizes_plane() {
        let x = t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = x.instance_norm(&Tensor::ones(&[1]), &Tensor::zeros(&[1]), 1e-5).unwrap();
        let v = y.to_vec();
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        let var: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn dropout_rate_zero_and_inference_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::randn(&[100], 1.0, &mut rng);
        assert_eq!(x.dropout(0.0, true, 1).unwrap().to_vec(), x.to_vec());
        assert_eq!(x.dropout(0.7, false, 1).unwrap().to_vec(), x.to_vec());
        assert!(x.dropout(1.0, true, 1).is_err());
        assert!(x.dropout(-0.1, true, 1).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let x = Tensor::<f64>::ones(&[100_000]);
        let y = x.dropout(0.5, true, 42).unwrap();
        let mean: f64 = y.to_vec().iter().sum::<f64>() / 100_000.0;
        assert!((mean - 1.0).abs() < 0.02, "sample mean {mean}");
    }

    #[test]
    fn dropout_same_seed_is_bit_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::randn(&[512], 1.0, &mut rng);
        let a = x.dropout(0.3, true, 77).unwrap();
        let b = x.dropout(0.3, true, 77).unwrap();
        let c = x.dropout(0.3, true, 78).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
        assert_ne!(a.to_vec(), c.to_vec());
    }

    #[test]
    fn backward_linear_map_gradient_is_input() {
        let w = Tensor::<f64>::new(&[3], vec![0.5, -1.0, 2.0], true).unwrap();
        let x = t64(&[3], &[3.0, 4.0, 5.0]);
        let loss = w.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn backward_at_quadratic_minimum_is_zero() {
        let t = t64(&[4], &[1.0, -2.0, 0.5, 3.0]);
        let w = Tensor::<f64>::new(&[4], t.to_vec(), true).unwrap();
        let loss = w.sub(&t).unwrap().square().mean();
        loss.backward().unwrap();
        assert!(w.grad().unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let w = Tensor::<f64>::new(&[2], vec![1.0, 2.0], true).unwrap();
        let y = w.affine(2.0, 0.0);
        assert!(y.backward().is_err());
    }

    #[test]
    fn backward_accumulates_without_reset() {
        let w = Tensor::<f64>::new(&[2], vec![1.0, 2.0], true).unwrap();
        for _ in 0..2 {
            let loss = w.sum();
            loss.backward().unwrap();
        }
        assert_eq!(w.grad().unwrap(), vec![2.0, 2.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let w = Tensor::<f64>::new(&[2], vec![1.0, 2.0], true).unwrap();
        let y = no_grad(|| w.affine(3.0, 0.0));
        assert!(!y.requires_grad());
    }
}
