//! CPU kernels with hand-written backward passes for the layers that
//! dominate training time: convolution (im2col + gemm), nearest 2x
//! upsampling, batch normalisation and LeakyReLU.

use std::sync::{Arc, Mutex};

use candle_core::{CpuStorage, CustomOp1, CustomOp2, CustomOp3, Layout, Shape, Tensor};

fn slice<'a>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [f32]> {
    let data = match s {
        CpuStorage::F32(v) => v.as_slice(),
        _ => candle_core::bail!("relight ops only support f32"),
    };
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("relight ops need contiguous inputs"),
    }
}

fn values(t: &Tensor) -> candle_core::Result<Vec<f32>> {
    t.flatten_all()?.to_vec1::<f32>()
}

/// `c (m x n) (+)= a (m x k) * b (k x n)` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn sgemm(
    m: usize,
    n: usize,
    k: usize,
    a: &[f32],
    (a_rs, a_cs): (usize, usize),
    b: &[f32],
    (b_rs, b_cs): (usize, usize),
    c: &mut [f32],
    c_rs: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * a_rs + k.saturating_sub(1) * a_cs || k == 0);
    debug_assert!(c.len() >= (m - 1) * c_rs + n);
    // SAFETY: every index touched lies inside the slices (checked above for
    // `a` and `c`; callers size `b` as k x n under its strides).
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            c_rs as isize,
            accumulate,
            a.as_ptr(),
            a_cs as isize,
            a_rs as isize,
            b.as_ptr(),
            b_cs as isize,
            b_rs as isize,
            1.0,
            1.0,
            false,
            false,
            false,
            gemm::Parallelism::None,
        )
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn new(x: &[usize], wt: &[usize], stride: usize, pad: usize) -> candle_core::Result<(usize, Self)> {
        let (&[n, c_in, h, w], &[c_out, wc, kh, kw]) = (x, wt) else {
            candle_core::bail!("conv2d expects 4d input and weight, got {x:?} and {wt:?}")
        };
        if wc != c_in || kh != kw || h + 2 * pad < kh || w + 2 * pad < kw || stride == 0 {
            candle_core::bail!("conv2d shape mismatch: input {x:?}, weight {wt:?}");
        }
        let g = Self {
            c_in,
            h,
            w,
            c_out,
            k: kh,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        };
        Ok((n, g))
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Source index for output column `o` of kernel tap `(ky, kx)` along one axis.
    fn src(&self, o: usize, tap: usize, len: usize) -> Option<usize> {
        let i = (o * self.stride + tap) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < len).then_some(i as usize)
    }

    fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let p = self.cols();
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((c * self.k + ky) * self.k + kx) * p;
                    for oy in 0..self.oh {
                        let dst = &mut cols[row + oy * self.ow..row + (oy + 1) * self.ow];
                        match self.src(oy, ky, self.h) {
                            None => dst.fill(0.0),
                            Some(iy) => {
                                let line = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = self.src(ox, kx, self.w).map_or(0.0, |ix| line[ix]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], x: &mut [f32]) {
        let p = self.cols();
        for c in 0..self.c_in {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((c * self.k + ky) * self.k + kx) * p;
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else { continue };
                        let src = &cols[row + oy * self.ow..row + (oy + 1) * self.ow];
                        for (ox, v) in src.iter().enumerate() {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                plane[iy * self.w + ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Square-kernel 2d convolution without bias.
struct Conv2dOp {
    stride: usize,
    pad: usize,
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "relight-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (x, wt) = (slice(s1, l1)?, slice(s2, l2)?);
        let (n, g) = ConvGeometry::new(l1.dims(), l2.dims(), self.stride, self.pad)?;
        let (k, p) = (g.rows(), g.cols());
        let in_len = g.c_in * g.h * g.w;
        let mut out = vec![0f32; n * g.c_out * p];
        let mut cols = if g.pointwise() { Vec::new() } else { vec![0f32; k * p] };
        for i in 0..n {
            let xi = &x[i * in_len..(i + 1) * in_len];
            let b = if g.pointwise() {
                xi
            } else {
                g.im2col(xi, &mut cols);
                &cols
            };
            let yi = &mut out[i * g.c_out * p..(i + 1) * g.c_out * p];
            sgemm(g.c_out, p, k, wt, (k, 1), b, (p, 1), yi, p, false);
        }
        Ok((CpuStorage::F32(out), Shape::from((n, g.c_out, g.oh, g.ow))))
    }

    fn bwd(&self, x: &Tensor, wt: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let (n, g) = ConvGeometry::new(x.dims(), wt.dims(), self.stride, self.pad)?;
        let (k, p) = (g.rows(), g.cols());
        let in_len = g.c_in * g.h * g.w;
        let (xv, wv, dy) = (values(x)?, values(wt)?, values(grad)?);
        let mut dx = vec![0f32; n * in_len];
        let mut dw = vec![0f32; g.c_out * k];
        let mut cols = vec![0f32; if g.pointwise() { 0 } else { k * p }];
        let mut dcols = vec![0f32; if g.pointwise() { 0 } else { k * p }];
        for i in 0..n {
            let xi = &xv[i * in_len..(i + 1) * in_len];
            let dyi = &dy[i * g.c_out * p..(i + 1) * g.c_out * p];
            let dxi = &mut dx[i * in_len..(i + 1) * in_len];
            if g.pointwise() {
                sgemm(g.c_out, k, p, dyi, (p, 1), xi, (1, p), &mut dw, k, true);
                sgemm(k, p, g.c_out, &wv, (1, k), dyi, (p, 1), dxi, p, false);
            } else {
                g.im2col(xi, &mut cols);
                sgemm(g.c_out, k, p, dyi, (p, 1), &cols, (1, p), &mut dw, k, true);
                sgemm(k, p, g.c_out, &wv, (1, k), dyi, (p, 1), &mut dcols, p, false);
                g.col2im(&dcols, dxi);
            }
        }
        let dx = Tensor::from_vec(dx, x.shape(), x.device())?;
        let dw = Tensor::from_vec(dw, wt.shape(), wt.device())?;
        Ok((Some(dx), Some(dw)))
    }
}

/// `(N, Cin, H, W) * (Cout, Cin, k, k)` with zero padding.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op2(&weight.contiguous()?, Conv2dOp { stride, pad: padding })
}

struct Upsample2xOp;

impl CustomOp1 for Upsample2xOp {
    fn name(&self) -> &'static str {
        "relight-upsample2x"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let x = slice(s, l)?;
        let (n, c, h, w) = l.shape().dims4()?;
        let mut out = vec![0f32; n * c * 4 * h * w];
        for (plane, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(4 * h * w)) {
            for y in 0..2 * h {
                let src = &plane[(y / 2) * w..(y / 2 + 1) * w];
                for (x2, d) in dst[y * 2 * w..(y + 1) * 2 * w].iter_mut().enumerate() {
                    *d = src[x2 / 2];
                }
            }
        }
        Ok((CpuStorage::F32(out), Shape::from((n, c, 2 * h, 2 * w))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let (_, _, h, w) = arg.dims4()?;
        let dy = values(grad)?;
        let mut dx = vec![0f32; arg.elem_count()];
        for (src, plane) in dy.chunks_exact(4 * h * w).zip(dx.chunks_exact_mut(h * w)) {
            for y in 0..2 * h {
                let row = &mut plane[(y / 2) * w..(y / 2 + 1) * w];
                for (x2, v) in src[y * 2 * w..(y + 1) * 2 * w].iter().enumerate() {
                    row[x2 / 2] += v;
                }
            }
        }
        Ok(Some(Tensor::from_vec(dx, arg.shape(), arg.device())?))
    }
}

/// Nearest-neighbour 2x upsampling of `(N, C, H, W)`.
pub fn upsample_nearest2x(x: &Tensor) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(Upsample2xOp)
}

struct LeakyReluOp(f32);

impl CustomOp1 for LeakyReluOp {
    fn name(&self) -> &'static str {
        "relight-leaky-relu"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = slice(s, l)?.iter().map(|&v| if v > 0.0 { v } else { v * self.0 }).collect();
        Ok((CpuStorage::F32(out), l.shape().clone()))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let dx: Vec<f32> = values(arg)?
            .iter()
            .zip(values(grad)?)
            .map(|(&x, g)| if x > 0.0 { g } else { g * self.0 })
            .collect();
        Ok(Some(Tensor::from_vec(dx, arg.shape(), arg.device())?))
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(LeakyReluOp(slope as f32))
}

/// Per-channel statistics of the last training-mode call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    /// Biased (population) variance.
    pub var: Vec<f32>,
    /// Elements per channel.
    pub count: usize,
}

struct BatchNormOp {
    eps: f32,
    /// `Some` in inference mode: normalise with these instead of batch statistics.
    fixed: Option<ChannelStats>,
    used: Arc<Mutex<ChannelStats>>,
}

impl BatchNormOp {
    fn stats(&self, x: &[f32], n: usize, c: usize, hw: usize) -> ChannelStats {
        if let Some(f) = &self.fixed {
            return f.clone();
        }
        let count = n * hw;
        let mut mean = vec![0f32; c];
        let mut var = vec![0f32; c];
        for ch in 0..c {
            let planes = || (0..n).map(move |i| &x[(i * c + ch) * hw..(i * c + ch + 1) * hw]);
            let m = planes().flatten().map(|&v| v as f64).sum::<f64>() / count as f64;
            let v = planes().flatten().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / count as f64;
            mean[ch] = m as f32;
            var[ch] = v as f32;
        }
        ChannelStats { mean, var, count }
    }
}

impl CustomOp3 for BatchNormOp {
    fn name(&self) -> &'static str {
        "relight-batch-norm"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (x, gamma, beta) = (slice(s1, l1)?, slice(s2, l2)?, slice(s3, l3)?);
        let (n, c, h, w) = l1.shape().dims4()?;
        let hw = h * w;
        let st = self.stats(x, n, c, hw);
        let mut out = vec![0f32; x.len()];
        for i in 0..n {
            for ch in 0..c {
                let scale = gamma[ch] / (st.var[ch] + self.eps).sqrt();
                let shift = beta[ch] - st.mean[ch] * scale;
                let at = (i * c + ch) * hw;
                for (o, &v) in out[at..at + hw].iter_mut().zip(&x[at..at + hw]) {
                    *o = v * scale + shift;
                }
            }
        }
        *self.used.lock().expect("batch-norm stats lock") = st;
        Ok((CpuStorage::F32(out), l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        let st = self.used.lock().expect("batch-norm stats lock").clone();
        let (xv, gv, dy) = (values(x)?, values(gamma)?, values(grad)?);
        let mut dgamma = vec![0f32; c];
        let mut dbeta = vec![0f32; c];
        let mut dx = vec![0f32; xv.len()];
        let m = (n * hw) as f64;
        for ch in 0..c {
            let inv = 1.0 / (st.var[ch] as f64 + self.eps as f64).sqrt();
            let mean = st.mean[ch] as f64;
            let (mut sdy, mut sdyx) = (0f64, 0f64);
            for i in 0..n {
                let at = (i * c + ch) * hw;
                for (&g, &v) in dy[at..at + hw].iter().zip(&xv[at..at + hw]) {
                    sdy += g as f64;
                    sdyx += g as f64 * (v as f64 - mean) * inv;
                }
            }
            dbeta[ch] = sdy as f32;
            dgamma[ch] = sdyx as f32;
            let k = gv[ch] as f64 * inv;
            for i in 0..n {
                let at = (i * c + ch) * hw;
                for j in at..at + hw {
                    let g = dy[j] as f64;
                    dx[j] = if self.fixed.is_some() {
                        (k * g) as f32
                    } else {
                        let xhat = (xv[j] as f64 - mean) * inv;
                        (k * (g - sdy / m - xhat * sdyx / m)) as f32
                    };
                }
            }
        }
        let dev = x.device();
        Ok((
            Some(Tensor::from_vec(dx, x.shape(), dev)?),
            Some(Tensor::from_vec(dgamma, gamma.shape(), dev)?),
            Some(Tensor::from_vec(dbeta, gamma.shape(), dev)?),
        ))
    }
}

/// Batch normalisation of `(N, C, H, W)`. With `fixed == None` the batch
/// statistics are used and returned; otherwise `fixed` is applied as is.
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
    fixed: Option<ChannelStats>,
) -> candle_core::Result<(Tensor, ChannelStats)> {
    let used = Arc::new(Mutex::new(ChannelStats::default()));
    let op = BatchNormOp {
        eps: eps as f32,
        fixed,
        used: used.clone(),
    };
    let y = x.contiguous()?.apply_op3(&gamma.contiguous()?, &beta.contiguous()?, op)?;
    let st = used.lock().expect("batch-norm stats lock").clone();
    Ok((y, st))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn close(a: &Tensor, b: &Tensor, tol: f32) {
        let (a, b) = (values(a).unwrap(), values(b).unwrap());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    fn rand(shape: &[usize], seed: u64) -> Var {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let v: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Var::from_tensor(&Tensor::from_vec(v, shape, &Device::Cpu).unwrap()).unwrap()
    }

    /// Compares forward values and gradients against candle's own kernels.
    fn check_conv(x: &[usize], w: &[usize], stride: usize, pad: usize) {
        let (xv, wv) = (rand(x, 1), rand(w, 2));
        let probe = rand(&[1], 3);
        let ours = conv2d(&xv, &wv, stride, pad).unwrap();
        let theirs = xv.conv2d(&wv, pad, stride, 1, 1).unwrap();
        close(&ours, &theirs, 1e-5);
        let weights = Tensor::rand(0f32, 1.0, ours.shape(), &Device::Cpu).unwrap();
        let loss = |y: Tensor| (y * &weights).unwrap().sum_all().unwrap().broadcast_mul(&probe).unwrap();
        let ga = loss(ours).backward().unwrap();
        let gb = loss(theirs).backward().unwrap();
        close(ga.get(&xv).unwrap(), gb.get(&xv).unwrap(), 1e-4);
        close(ga.get(&wv).unwrap(), gb.get(&wv).unwrap(), 1e-4);
    }

    #[test]
    fn conv_matches_reference() {
        check_conv(&[2, 3, 9, 9], &[4, 3, 3, 3], 1, 1);
        check_conv(&[2, 3, 8, 8], &[5, 3, 3, 3], 2, 1);
        check_conv(&[1, 2, 8, 8], &[3, 2, 4, 4], 2, 1);
        check_conv(&[3, 4, 5, 5], &[6, 4, 1, 1], 1, 0);
        check_conv(&[1, 2, 2, 2], &[2, 2, 3, 3], 1, 1);
    }

    #[test]
    fn upsample_matches_reference() {
        let x = rand(&[2, 3, 4, 5], 4);
        let ours = upsample_nearest2x(&x).unwrap();
        let theirs = x.upsample_nearest2d(8, 10).unwrap();
        close(&ours, &theirs, 0.0);
        let w = Tensor::rand(0f32, 1.0, ours.shape(), &Device::Cpu).unwrap();
        let ga = (ours * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let gb = (theirs * &w).unwrap().sum_all().unwrap().backward().unwrap();
        close(ga.get(&x).unwrap(), gb.get(&x).unwrap(), 1e-6);
    }

    #[test]
    fn leaky_relu_matches_reference() {
        let x = rand(&[2, 3, 4, 4], 5);
        let ours = leaky_relu(&x, 0.2).unwrap();
        let theirs = candle_nn::ops::leaky_relu(&x, 0.2).unwrap();
        close(&ours, &theirs, 0.0);
        let w = Tensor::rand(0f32, 1.0, ours.shape(), &Device::Cpu).unwrap();
        let ga = (ours * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let gb = (theirs * &w).unwrap().sum_all().unwrap().backward().unwrap();
        close(ga.get(&x).unwrap(), gb.get(&x).unwrap(), 1e-6);
    }

    /// Reference batch norm written with differentiable tensor ops.
    fn reference_bn(x: &Tensor, g: &Tensor, b: &Tensor, eps: f64) -> Tensor {
        let mean = x.mean_keepdim((0, 2, 3)).unwrap();
        let centred = x.broadcast_sub(&mean).unwrap();
        let var = centred.sqr().unwrap().mean_keepdim((0, 2, 3)).unwrap();
        let xhat = centred.broadcast_div(&(var + eps).unwrap().sqrt().unwrap()).unwrap();
        xhat.broadcast_mul(&g.reshape((1, (), 1, 1)).unwrap())
            .unwrap()
            .broadcast_add(&b.reshape((1, (), 1, 1)).unwrap())
            .unwrap()
    }

    #[test]
    fn batch_norm_matches_reference() {
        let (x, g, b) = (rand(&[3, 4, 5, 5], 6), rand(&[4], 7), rand(&[4], 8));
        let (ours, st) = batch_norm(&x, &g, &b, 1e-5, None).unwrap();
        let theirs = reference_bn(&x, &g, &b, 1e-5);
        close(&ours, &theirs, 1e-4);
        assert_eq!(st.count, 75);
        let w = Tensor::rand(0f32, 1.0, ours.shape(), &Device::Cpu).unwrap();
        let ga = (ours * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let gb = (theirs * &w).unwrap().sum_all().unwrap().backward().unwrap();
        for v in [&x, &g, &b] {
            close(ga.get(v).unwrap(), gb.get(v).unwrap(), 1e-3);
        }
    }

    #[test]
    fn fixed_stats_are_an_affine_map() {
        let x = rand(&[1, 2, 2, 2], 9);
        let g = Tensor::new(&[2f32, 1.0], &Device::Cpu).unwrap();
        let b = Tensor::new(&[0f32, 1.0], &Device::Cpu).unwrap();
        let fixed = ChannelStats { mean: vec![0.0, 1.0], var: vec![1.0, 4.0], count: 0 };
        let (y, _) = batch_norm(&x, &g, &b, 0.0, Some(fixed)).unwrap();
        let (xs, ys) = (values(&x).unwrap(), values(&y).unwrap());
        for i in 0..4 {
            assert!((ys[i] - 2.0 * xs[i]).abs() < 1e-6);
            assert!((ys[4 + i] - ((xs[4 + i] - 1.0) / 2.0 + 1.0)).abs() < 1e-6);
        }
    }
}
