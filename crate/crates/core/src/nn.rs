//! Minimal f32 tensor and layer kernels with hand-written backward passes.
//!
//! Activations are NCHW, row-major. Convolutions lower to GEMM via im2col and
//! run per sample in parallel; per-sample weight gradients are summed in index
//! order so results are bit-identical regardless of thread count.

use rand::Rng;
use rayon::prelude::*;

/// Per-sample `(dw, db, dx)` of a convolution backward pass.
type SampleGrads = (Vec<f32>, Vec<f32>, Option<Vec<f32>>);

/// Dense NCHW activation batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Self { n, c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    fn from_samples(c: usize, h: usize, w: usize, samples: Vec<Vec<f32>>) -> Self {
        let n = samples.len();
        let mut data = Vec::with_capacity(n * c * h * w);
        for s in samples {
            debug_assert_eq!(s.len(), c * h * w);
            data.extend_from_slice(&s);
        }
        Self { n, c, h, w, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A named trainable array.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            value: vec![0.0; len],
        }
    }

    /// Uniform init in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(name: impl Into<String>, shape: Vec<usize>, bound: f32, rng: &mut R) -> Self {
        let len = shape.iter().product();
        let value = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            name: name.into(),
            shape,
            value,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Row-major `C = op(A)·op(B) + beta·C` where `op(A)` is m×k and `op(B)` is k×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index matrixmultiply touches given
    // these strides; `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2-D convolution with square kernel, zero padding `kernel / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Param,
    pub bias: Param,
}

pub struct ConvCache {
    cols: Vec<Vec<f32>>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
}

pub struct ConvGrad {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    /// Kaiming-uniform init (fan-in scaled for a following ReLU).
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = (6.0 / fan_in as f32).sqrt();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Param::uniform(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
                bound,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels]),
        }
    }

    fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.padding();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
        let (k, s, p) = (self.kernel, self.stride, self.padding() as isize);
        let plane = oh * ow;
        let mut cols = vec![0.0f32; self.in_channels * k * k * plane];
        for ci in 0..self.in_channels {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * s) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
        let (k, s, p) = (self.kernel, self.stride, self.padding() as isize);
        let plane = oh * ow;
        let mut x = vec![0.0f32; self.in_channels * h * w];
        for ci in 0..self.in_channels {
            let dst = &mut x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * s) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ConvCache) {
        assert_eq!(x.c, self.in_channels, "{}: channel mismatch", self.weight.name);
        let (oh, ow) = self.output_hw(x.h, x.w);
        let plane = oh * ow;
        let kdim = self.in_channels * self.kernel * self.kernel;
        let results: Vec<(Vec<f32>, Vec<f32>)> = (0..x.n)
            .into_par_iter()
            .map(|i| {
                let cols = if self.is_pointwise() {
                    x.sample(i).to_vec()
                } else {
                    self.im2col(x.sample(i), x.h, x.w, oh, ow)
                };
                let mut out = vec![0.0f32; self.out_channels * plane];
                for (o, chunk) in out.chunks_mut(plane).enumerate() {
                    chunk.fill(self.bias.value[o]);
                }
                gemm(
                    self.out_channels,
                    kdim,
                    plane,
                    &self.weight.value,
                    false,
                    &cols,
                    false,
                    &mut out,
                    1.0,
                );
                (out, cols)
            })
            .collect();
        let (outs, cols): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        (
            Tensor::from_samples(self.out_channels, oh, ow, outs),
            ConvCache {
                cols,
                in_shape: x.shape(),
                out_hw: (oh, ow),
            },
        )
    }

    /// Returns the input gradient (when `need_input_grad`) and parameter gradients.
    pub fn backward(&self, cache: &ConvCache, dout: &Tensor, need_input_grad: bool) -> (Option<Tensor>, ConvGrad) {
        let [n, _, h, w] = cache.in_shape;
        let (oh, ow) = cache.out_hw;
        let plane = oh * ow;
        let kdim = self.in_channels * self.kernel * self.kernel;
        let per_sample: Vec<SampleGrads> = (0..n)
            .into_par_iter()
            .map(|i| {
                let dy = dout.sample(i);
                let cols = &cache.cols[i];
                let mut dw = vec![0.0f32; self.out_channels * kdim];
                gemm(self.out_channels, plane, kdim, dy, false, cols, true, &mut dw, 0.0);
                let db: Vec<f32> = dy.chunks(plane).map(|c| c.iter().sum()).collect();
                let dx = need_input_grad.then(|| {
                    let mut dcols = vec![0.0f32; kdim * plane];
                    gemm(
                        kdim,
                        self.out_channels,
                        plane,
                        &self.weight.value,
                        true,
                        dy,
                        false,
                        &mut dcols,
                        0.0,
                    );
                    if self.is_pointwise() {
                        dcols
                    } else {
                        self.col2im(&dcols, h, w, oh, ow)
                    }
                });
                (dw, db, dx)
            })
            .collect();

        let mut grad = ConvGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        };
        let mut dxs = Vec::with_capacity(n);
        for (dw, db, dx) in per_sample {
            add_assign(&mut grad.weight, &dw);
            add_assign(&mut grad.bias, &db);
            if let Some(dx) = dx {
                dxs.push(dx);
            }
        }
        let dx = need_input_grad.then(|| Tensor::from_samples(self.in_channels, h, w, dxs));
        (dx, grad)
    }
}

/// Fully connected layer on `(n, in, 1, 1)` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
}

pub struct LinearGrad {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    /// LeCun-uniform init (fan-in scaled, no activation follows).
    pub fn new<R: Rng + ?Sized>(name: &str, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = (3.0 / in_features as f32).sqrt();
        Self {
            in_features,
            out_features,
            weight: Param::uniform(format!("{name}.weight"), vec![out_features, in_features], bound, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![out_features]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(
            x.sample_len(),
            self.in_features,
            "{}: feature mismatch",
            self.weight.name
        );
        let mut out = Tensor::zeros(x.n, self.out_features, 1, 1);
        for row in out.data.chunks_mut(self.out_features) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(
            x.n,
            self.in_features,
            self.out_features,
            &x.data,
            false,
            &self.weight.value,
            true,
            &mut out.data,
            1.0,
        );
        out
    }

    pub fn backward(&self, x: &Tensor, dout: &Tensor, need_input_grad: bool) -> (Option<Tensor>, LinearGrad) {
        let mut weight = vec![0.0f32; self.weight.len()];
        gemm(
            self.out_features,
            x.n,
            self.in_features,
            &dout.data,
            true,
            &x.data,
            false,
            &mut weight,
            0.0,
        );
        let mut bias = vec![0.0f32; self.out_features];
        for row in dout.data.chunks(self.out_features) {
            add_assign(&mut bias, row);
        }
        let dx = need_input_grad.then(|| {
            let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
            gemm(
                x.n,
                self.out_features,
                self.in_features,
                &dout.data,
                false,
                &self.weight.value,
                false,
                &mut dx.data,
                0.0,
            );
            dx
        });
        (dx, LinearGrad { weight, bias })
    }
}

pub(crate) fn add_assign(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` where the ReLU output was not positive.
pub fn relu_backward(output: &Tensor, grad: &mut Tensor) {
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2x(x: &Tensor) -> Tensor {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    for (src, dst) in x.data.chunks(x.h * x.w).zip(out.data.chunks_mut(oh * ow)) {
        for oy in 0..oh {
            let srow = &src[(oy / 2) * x.w..(oy / 2 + 1) * x.w];
            for (ox, d) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *d = srow[ox / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward(dout: &Tensor) -> Tensor {
    let (h, w) = (dout.h / 2, dout.w / 2);
    let mut dx = Tensor::zeros(dout.n, dout.c, h, w);
    for (src, dst) in dout.data.chunks(dout.h * dout.w).zip(dx.data.chunks_mut(h * w)) {
        for oy in 0..dout.h {
            for ox in 0..dout.w {
                dst[(oy / 2) * w + ox / 2] += src[oy * dout.w + ox];
            }
        }
    }
    dx
}

/// Channel-wise concatenation of two batches with equal n, h, w.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat shape mismatch");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    for i in 0..a.n {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Tensor::from_vec(a.n, a.c + b.c, a.h, a.w, data)
}

/// Splits a concatenated gradient back into its `(first, second)` parts.
pub fn split_channels(d: &Tensor, first: usize) -> (Tensor, Tensor) {
    let plane = d.h * d.w;
    let second = d.c - first;
    let mut a = Vec::with_capacity(d.n * first * plane);
    let mut b = Vec::with_capacity(d.n * second * plane);
    for i in 0..d.n {
        let s = d.sample(i);
        a.extend_from_slice(&s[..first * plane]);
        b.extend_from_slice(&s[first * plane..]);
    }
    (
        Tensor::from_vec(d.n, first, d.h, d.w, a),
        Tensor::from_vec(d.n, second, d.h, d.w, b),
    )
}

pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let plane = (x.h * x.w) as f32;
    let data = x
        .data
        .chunks(x.h * x.w)
        .map(|c| c.iter().sum::<f32>() / plane)
        .collect();
    Tensor::from_vec(x.n, x.c, 1, 1, data)
}

pub fn global_avg_pool_backward(dout: &Tensor, h: usize, w: usize) -> Tensor {
    let plane = h * w;
    let mut dx = Tensor::zeros(dout.n, dout.c, h, w);
    for (chunk, &g) in dx.data.chunks_mut(plane).zip(&dout.data) {
        chunk.fill(g / plane as f32);
    }
    dx
}

/// Softmax over the channel axis at every spatial position.
pub fn softmax_channels(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let plane = logits.h * logits.w;
    for i in 0..logits.n {
        let base = i * logits.c * plane;
        for p in 0..plane {
            let idx = |c: usize| base + c * plane + p;
            let max = (0..logits.c)
                .map(|c| logits.data[idx(c)])
                .fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for c in 0..logits.c {
                let e = (logits.data[idx(c)] - max).exp();
                out.data[idx(c)] = e;
                sum += e;
            }
            for c in 0..logits.c {
                out.data[idx(c)] /= sum;
            }
        }
    }
    out
}

/// Mean cross-entropy over every (sample, position) with integer targets laid
/// out as `labels[i * h * w + pos]`. Returns the loss and d(loss)/d(logits).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f32, Tensor) {
    let plane = logits.h * logits.w;
    assert_eq!(labels.len(), logits.n * plane, "label count mismatch");
    let mut grad = softmax_channels(logits);
    let count = labels.len() as f64;
    let mut loss = 0.0f64;
    for i in 0..logits.n {
        let base = i * logits.c * plane;
        for p in 0..plane {
            let y = labels[i * plane + p];
            assert!(y < logits.c, "label {y} out of range for {} classes", logits.c);
            let idx = base + y * plane + p;
            loss -= (grad.data[idx].max(1e-30) as f64).ln();
            grad.data[idx] -= 1.0;
        }
    }
    let scale = 1.0 / count as f32;
    for g in &mut grad.data {
        *g *= scale;
    }
    ((loss / count) as f32, grad)
}

/// Index of the largest channel at every (sample, position).
pub fn argmax_channels(logits: &Tensor) -> Vec<usize> {
    let plane = logits.h * logits.w;
    let mut out = Vec::with_capacity(logits.n * plane);
    for i in 0..logits.n {
        let base = i * logits.c * plane;
        for p in 0..plane {
            let mut best = 0;
            let mut best_v = f32::NEG_INFINITY;
            for c in 0..logits.c {
                let v = logits.data[base + c * plane + p];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            out.push(best);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
        let data = (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(n, c, h, w, data)
    }

    /// Direct (non-GEMM) convolution used as an independent reference.
    fn naive_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (oh, ow) = conv.output_hw(x.h, x.w);
        let p = (conv.kernel / 2) as isize;
        let k = conv.kernel;
        let mut out = Tensor::zeros(x.n, conv.out_channels, oh, ow);
        for n in 0..x.n {
            for o in 0..conv.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.bias.value[o] as f64;
                        for ci in 0..conv.in_channels {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - p;
                                    let ix = (ox * conv.stride + kx) as isize - p;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    let xv = x.data[((n * x.c + ci) * x.h + iy as usize) * x.w + ix as usize];
                                    let wv = conv.weight.value[((o * conv.in_channels + ci) * k + ky) * k + kx];
                                    acc += (xv * wv) as f64;
                                }
                            }
                        }
                        out.data[((n * conv.out_channels + o) * oh + oy) * ow + ox] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, s) in [(3, 1), (3, 2), (1, 1)] {
            let conv = Conv2d::new("c", 3, 4, k, s, &mut rng);
            let x = rand_tensor(&mut rng, 2, 3, 6, 6);
            let (y, _) = conv.forward(&x);
            let reference = naive_conv(&conv, &x);
            assert_eq!(y.shape(), reference.shape());
            for (a, b) in y.data.iter().zip(&reference.data) {
                assert!((a - b).abs() < 1e-5, "k={k} s={s}: {a} vs {b}");
            }
        }
    }

    /// Finite-difference check of conv gradients through a linear probe loss.
    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (k, s) in [(3, 1), (3, 2), (1, 1)] {
            let mut conv = Conv2d::new("c", 2, 3, k, s, &mut rng);
            let x = rand_tensor(&mut rng, 2, 2, 5, 5);
            let (y, cache) = conv.forward(&x);
            let probe = rand_tensor(&mut rng, y.n, y.c, y.h, y.w);
            let loss = |conv: &Conv2d, x: &Tensor| -> f64 {
                let y = naive_conv(conv, x);
                y.data.iter().zip(&probe.data).map(|(a, b)| (a * b) as f64).sum()
            };
            let (dx, grad) = conv.backward(&cache, &probe, true);
            let dx = dx.unwrap();
            let eps = 1e-2f32;
            for idx in [0, 5, conv.weight.len() - 1] {
                let orig = conv.weight.value[idx];
                conv.weight.value[idx] = orig + eps;
                let up = loss(&conv, &x);
                conv.weight.value[idx] = orig - eps;
                let down = loss(&conv, &x);
                conv.weight.value[idx] = orig;
                let fd = (up - down) / (2.0 * eps as f64);
                assert!(
                    (fd - grad.weight[idx] as f64).abs() < 1e-2,
                    "dW[{idx}] fd={fd} got={}",
                    grad.weight[idx]
                );
            }
            let mut xp = x.clone();
            for idx in [0, 7, x.data.len() - 1] {
                let orig = xp.data[idx];
                xp.data[idx] = orig + eps;
                let up = loss(&conv, &xp);
                xp.data[idx] = orig - eps;
                let down = loss(&conv, &xp);
                xp.data[idx] = orig;
                let fd = (up - down) / (2.0 * eps as f64);
                assert!(
                    (fd - dx.data[idx] as f64).abs() < 1e-2,
                    "dX[{idx}] fd={fd} got={}",
                    dx.data[idx]
                );
            }
            let db_expected: f32 = probe
                .data
                .chunks(y.h * y.w)
                .enumerate()
                .filter(|(i, _)| i % 3 == 0)
                .map(|(_, c)| c.iter().sum::<f32>())
                .sum();
            assert!((grad.bias[0] - db_expected).abs() < 1e-4);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lin = Linear::new("fc", 4, 3, &mut rng);
        let x = rand_tensor(&mut rng, 2, 4, 1, 1);
        let probe = rand_tensor(&mut rng, 2, 3, 1, 1);
        let loss = |lin: &Linear, x: &Tensor| -> f64 {
            lin.forward(x)
                .data
                .iter()
                .zip(&probe.data)
                .map(|(a, b)| (a * b) as f64)
                .sum()
        };
        let (dx, grad) = lin.backward(&x, &probe, true);
        let eps = 1e-2f32;
        for idx in 0..lin.weight.len() {
            let orig = lin.weight.value[idx];
            lin.weight.value[idx] = orig + eps;
            let up = loss(&lin, &x);
            lin.weight.value[idx] = orig - eps;
            let down = loss(&lin, &x);
            lin.weight.value[idx] = orig;
            assert!(((up - down) / (2.0 * eps as f64) - grad.weight[idx] as f64).abs() < 1e-3);
        }
        let dx = dx.unwrap();
        let mut xp = x.clone();
        for idx in 0..xp.data.len() {
            let orig = xp.data[idx];
            xp.data[idx] = orig + eps;
            let up = loss(&lin, &xp);
            xp.data[idx] = orig - eps;
            let down = loss(&lin, &xp);
            xp.data[idx] = orig;
            assert!(((up - down) / (2.0 * eps as f64) - dx.data[idx] as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut logits = rand_tensor(&mut rng, 2, 3, 2, 2);
        let labels: Vec<usize> = (0..8).map(|i| i % 3).collect();
        let (_, grad) = softmax_cross_entropy(&logits, &labels);
        let eps = 1e-2f32;
        for idx in 0..logits.data.len() {
            let orig = logits.data[idx];
            logits.data[idx] = orig + eps;
            let up = softmax_cross_entropy(&logits, &labels).0 as f64;
            logits.data[idx] = orig - eps;
            let down = softmax_cross_entropy(&logits, &labels).0 as f64;
            logits.data[idx] = orig;
            assert!(((up - down) / (2.0 * eps as f64) - grad.data[idx] as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = rand_tensor(&mut rng, 3, 7, 2, 3);
        let probs = softmax_channels(&logits);
        let plane = 6;
        for i in 0..3 {
            for p in 0..plane {
                let s: f32 = (0..7).map(|c| probs.data[(i * 7 + c) * plane + p]).sum();
                assert!((s - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn upsample_and_concat_adjoint_shapes() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let up = upsample2x(&x);
        assert_eq!(up.shape(), [1, 1, 4, 4]);
        assert_eq!(&up.data[..4], &[1.0, 1.0, 2.0, 2.0]);
        let back = upsample2x_backward(&Tensor::from_vec(1, 1, 4, 4, vec![1.0; 16]));
        assert_eq!(back.data, vec![4.0; 4]);

        let a = Tensor::from_vec(2, 1, 1, 2, vec![1.0, 2.0, 5.0, 6.0]);
        let b = Tensor::from_vec(2, 2, 1, 2, vec![3.0, 3.0, 4.0, 4.0, 7.0, 7.0, 8.0, 8.0]);
        let cat = concat_channels(&a, &b);
        assert_eq!(cat.c, 3);
        let (a2, b2) = split_channels(&cat, 1);
        assert_eq!((a2, b2), (a, b));
    }
}
