//! Layer kernels with hand-written reverse passes.
//!
//! Every `forward_cached` returns the activations the matching `backward`
//! needs; `backward` accumulates parameter gradients into a gradient copy of
//! the layer and returns the gradient with respect to the layer input.

use super::tensor::{add_assign, dot, matmul, matmul_nt, matmul_tn_acc, Tensor};
use crate::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// 3x3 same-padded convolution, weights laid out `[ky][kx][in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[3, 3, in_ch, out_ch]),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn in_ch(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_ch(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn forward(&self, input: &[T], h: usize, w: usize) -> Vec<T> {
        let (cin, cout) = (self.in_ch(), self.out_ch());
        debug_assert_eq!(input.len(), h * w * cin);
        let wt = self.weight.data();
        let mut out = Vec::with_capacity(h * w * cout);
        for _ in 0..h * w {
            out.extend_from_slice(self.bias.data());
        }
        for y in 0..h {
            for x in 0..w {
                let o = &mut out[(y * w + x) * cout..(y * w + x + 1) * cout];
                for ky in 0..3 {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = x as isize + kx as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = (iy as usize * w + ix as usize) * cin;
                        let wbase = (ky * 3 + kx) * cin * cout;
                        for i in 0..cin {
                            let v = input[src + i];
                            if v == T::zero() {
                                continue;
                            }
                            let wrow = &wt[wbase + i * cout..wbase + (i + 1) * cout];
                            for (acc, &wv) in o.iter_mut().zip(wrow) {
                                *acc += v * wv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(
        &self,
        input: &[T],
        h: usize,
        w: usize,
        dout: &[T],
        grad: &mut Conv2d<T>,
        need_input: bool,
    ) -> Option<Vec<T>> {
        let (cin, cout) = (self.in_ch(), self.out_ch());
        let wt = self.weight.data();
        let mut din = need_input.then(|| vec![T::zero(); h * w * cin]);
        {
            let gb = grad.bias.data_mut();
            for g in dout.chunks_exact(cout) {
                add_assign(gb, g);
            }
        }
        let gw = grad.weight.data_mut();
        for y in 0..h {
            for x in 0..w {
                let g = &dout[(y * w + x) * cout..(y * w + x + 1) * cout];
                for ky in 0..3 {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = x as isize + kx as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = (iy as usize * w + ix as usize) * cin;
                        let wbase = (ky * 3 + kx) * cin * cout;
                        for i in 0..cin {
                            let range = wbase + i * cout..wbase + (i + 1) * cout;
                            let v = input[src + i];
                            if v != T::zero() {
                                for (gw, &gv) in gw[range.clone()].iter_mut().zip(g) {
                                    *gw += v * gv;
                                }
                            }
                            if let Some(din) = din.as_mut() {
                                din[src + i] += dot(&wt[range], g);
                            }
                        }
                    }
                }
            }
        }
        din
    }
}

pub(crate) fn relu_in_place<T: Scalar>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub(crate) fn relu_mask<T: Scalar>(grad: &mut [T], activated: &[T]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// `relu(conv2(relu(conv1(x))) + x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct ResCache<T> {
    input: Vec<T>,
    hidden: Vec<T>,
    output: Vec<T>,
}

impl<T: Scalar> ResBlock<T> {
    pub fn zeros(ch: usize) -> Self {
        Self {
            conv1: Conv2d::zeros(ch, ch),
            conv2: Conv2d::zeros(ch, ch),
        }
    }

    pub fn forward(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        let mut a = self.conv1.forward(x, h, w);
        relu_in_place(&mut a);
        let mut out = self.conv2.forward(&a, h, w);
        add_assign(&mut out, x);
        relu_in_place(&mut out);
        out
    }

    pub(crate) fn forward_cached(&self, x: Vec<T>, h: usize, w: usize) -> (Vec<T>, ResCache<T>) {
        let mut hidden = self.conv1.forward(&x, h, w);
        relu_in_place(&mut hidden);
        let mut out = self.conv2.forward(&hidden, h, w);
        add_assign(&mut out, &x);
        relu_in_place(&mut out);
        let cache = ResCache {
            input: x,
            hidden,
            output: out.clone(),
        };
        (out, cache)
    }

    pub(crate) fn backward(
        &self,
        cache: &ResCache<T>,
        h: usize,
        w: usize,
        mut dout: Vec<T>,
        grad: &mut ResBlock<T>,
        need_input: bool,
    ) -> Option<Vec<T>> {
        relu_mask(&mut dout, &cache.output);
        let mut dhidden = self
            .conv2
            .backward(&cache.hidden, h, w, &dout, &mut grad.conv2, true)
            .expect("input gradient requested");
        relu_mask(&mut dhidden, &cache.hidden);
        let dx = self
            .conv1
            .backward(&cache.input, h, w, &dhidden, &mut grad.conv1, need_input);
        dx.map(|mut dx| {
            add_assign(&mut dx, &dout);
            dx
        })
    }
}

/// Per-token layer normalization with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct LnCache<T> {
    normalized: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn identity(d: usize) -> Self {
        let mut gain = Tensor::zeros(&[d]);
        gain.fill(T::one());
        Self {
            gain,
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            gain: Tensor::zeros(&[d]),
            bias: Tensor::zeros(&[d]),
        }
    }

    pub(crate) fn forward_cached(&self, x: &[T], n: usize) -> (Vec<T>, LnCache<T>) {
        let d = self.gain.len();
        let eps = T::of(LAYER_NORM_EPS);
        let dn = T::of_usize(d);
        let mut out = vec![T::zero(); n * d];
        let mut normalized = vec![T::zero(); n * d];
        let mut inv_std = Vec::with_capacity(n);
        for t in 0..n {
            let row = &x[t * d..(t + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let nv = (row[j] - mean) * is;
                normalized[t * d + j] = nv;
                out[t * d + j] = nv * self.gain.data()[j] + self.bias.data()[j];
            }
        }
        (
            out,
            LnCache {
                normalized,
                inv_std,
            },
        )
    }

    pub(crate) fn backward(
        &self,
        cache: &LnCache<T>,
        dout: &[T],
        grad: &mut LayerNorm<T>,
    ) -> Vec<T> {
        let d = self.gain.len();
        let n = cache.inv_std.len();
        let dn = T::of_usize(d);
        let mut dx = vec![T::zero(); n * d];
        for t in 0..n {
            let g = &dout[t * d..(t + 1) * d];
            let xh = &cache.normalized[t * d..(t + 1) * d];
            let mut dxh = vec![T::zero(); d];
            for j in 0..d {
                grad.gain.data_mut()[j] += g[j] * xh[j];
                grad.bias.data_mut()[j] += g[j];
                dxh[j] = g[j] * self.gain.data()[j];
            }
            let mean_dxh = dxh.iter().copied().sum::<T>() / dn;
            let mean_dxh_xh = dot(&dxh, xh) / dn;
            for j in 0..d {
                dx[t * d + j] = cache.inv_std[t] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }
        dx
    }
}

/// Affine map `y = x W + b`, `W` laid out `[in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.weight.shape()[0], self.weight.shape()[1])
    }

    pub(crate) fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        let (i, o) = self.dims();
        let mut y = matmul(x, self.weight.data(), n, i, o);
        for row in y.chunks_exact_mut(o) {
            add_assign(row, self.bias.data());
        }
        y
    }

    pub(crate) fn backward(&self, x: &[T], n: usize, dy: &[T], grad: &mut Linear<T>) -> Vec<T> {
        let (i, o) = self.dims();
        matmul_tn_acc(x, dy, n, i, o, grad.weight.data_mut());
        for row in dy.chunks_exact(o) {
            add_assign(grad.bias.data_mut(), row);
        }
        matmul_nt(dy, self.weight.data(), n, o, i)
    }
}

const GELU_C: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let u = k * (x + T::of(GELU_C) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let u = k * (x + T::of(GELU_C) * x * x * x);
    let t = u.tanh();
    let du = k * (T::one() + T::of(3.0 * GELU_C) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

/// One pre-norm transformer layer:
/// `p_hat = MSA(LN(p)) + p`, `out = MLP(LN(p_hat)) + p_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub ln1: LayerNorm<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayerCache<T> {
    ln1: LnCache<T>,
    z: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    ln2: LnCache<T>,
    z2: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

/// Softmax attention weights, laid out `[head][query][key]`.
pub fn attention_probabilities<T: Scalar>(
    q: &[T],
    k: &[T],
    n: usize,
    d: usize,
    heads: usize,
) -> Vec<T> {
    let dh = d / heads;
    let scale = T::one() / T::of_usize(dh).sqrt();
    let mut probs = vec![T::zero(); heads * n * n];
    for hd in 0..heads {
        let off = hd * dh;
        for i in 0..n {
            let qi = &q[i * d + off..i * d + off + dh];
            let row = &mut probs[(hd * n + i) * n..(hd * n + i + 1) * n];
            for j in 0..n {
                row[j] = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                sum += *r;
            }
            for r in row.iter_mut() {
                *r /= sum;
            }
        }
    }
    probs
}

impl<T: Scalar> EncoderLayer<T> {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            ln1: LayerNorm::zeros(d),
            wq: Tensor::zeros(&[d, d]),
            wk: Tensor::zeros(&[d, d]),
            wv: Tensor::zeros(&[d, d]),
            wo: Tensor::zeros(&[d, d]),
            ln2: LayerNorm::zeros(d),
            fc1: Linear::zeros(d, hidden),
            fc2: Linear::zeros(hidden, d),
        }
    }

    fn d(&self) -> usize {
        self.wq.shape()[0]
    }

    /// Attention weights of this layer's self-attention for input tokens `p`.
    pub fn attention(&self, p: &[T], n: usize, heads: usize) -> Vec<T> {
        let d = self.d();
        let (z, _) = self.ln1.forward_cached(p, n);
        let q = matmul(&z, self.wq.data(), n, d, d);
        let k = matmul(&z, self.wk.data(), n, d, d);
        attention_probabilities(&q, &k, n, d, heads)
    }

    /// Self-attention sub-layer without the residual connection.
    #[cfg(test)]
    pub(crate) fn msa(&self, z: &[T], n: usize, heads: usize) -> Vec<T> {
        let d = self.d();
        let q = matmul(z, self.wq.data(), n, d, d);
        let k = matmul(z, self.wk.data(), n, d, d);
        let v = matmul(z, self.wv.data(), n, d, d);
        let probs = attention_probabilities(&q, &k, n, d, heads);
        let attn = mix_values(&probs, &v, n, d, heads);
        matmul(&attn, self.wo.data(), n, d, d)
    }

    pub(crate) fn forward_cached(
        &self,
        p: &[T],
        n: usize,
        heads: usize,
    ) -> (Vec<T>, EncoderLayerCache<T>) {
        let d = self.d();
        let (z, ln1) = self.ln1.forward_cached(p, n);
        let q = matmul(&z, self.wq.data(), n, d, d);
        let k = matmul(&z, self.wk.data(), n, d, d);
        let v = matmul(&z, self.wv.data(), n, d, d);
        let probs = attention_probabilities(&q, &k, n, d, heads);
        let attn = mix_values(&probs, &v, n, d, heads);
        let mut p_hat = matmul(&attn, self.wo.data(), n, d, d);
        add_assign(&mut p_hat, p);

        let (z2, ln2) = self.ln2.forward_cached(&p_hat, n);
        let pre = self.fc1.forward(&z2, n);
        let act: Vec<T> = pre.iter().map(|x| gelu(*x)).collect();
        let mut out = self.fc2.forward(&act, n);
        add_assign(&mut out, &p_hat);
        let cache = EncoderLayerCache {
            ln1,
            z,
            q,
            k,
            v,
            probs,
            attn,
            ln2,
            z2,
            pre,
            act,
        };
        (out, cache)
    }

    pub(crate) fn backward(
        &self,
        cache: &EncoderLayerCache<T>,
        n: usize,
        heads: usize,
        dout: &[T],
        grad: &mut EncoderLayer<T>,
    ) -> Vec<T> {
        let d = self.d();
        let hidden = self.fc1.weight.shape()[1];
        let dh = d / heads;
        let scale = T::one() / T::of_usize(dh).sqrt();

        // MLP branch; the residual passes dout straight to p_hat.
        let mut dact = self.fc2.backward(&cache.act, n, dout, &mut grad.fc2);
        for (g, x) in dact.iter_mut().zip(&cache.pre) {
            *g *= gelu_grad(*x);
        }
        debug_assert_eq!(dact.len(), n * hidden);
        let dz2 = self.fc1.backward(&cache.z2, n, &dact, &mut grad.fc1);
        let mut dp_hat = self.ln2.backward(&cache.ln2, &dz2, &mut grad.ln2);
        add_assign(&mut dp_hat, dout);

        // Attention branch.
        matmul_tn_acc(&cache.attn, &dp_hat, n, d, d, grad.wo.data_mut());
        let dattn = matmul_nt(&dp_hat, self.wo.data(), n, d, d);
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut dprobs = vec![T::zero(); n];
        for hd in 0..heads {
            let off = hd * dh;
            for i in 0..n {
                let probs = &cache.probs[(hd * n + i) * n..(hd * n + i + 1) * n];
                let g = &dattn[i * d + off..i * d + off + dh];
                for j in 0..n {
                    dprobs[j] = dot(g, &cache.v[j * d + off..j * d + off + dh]);
                    let pj = probs[j];
                    if pj != T::zero() {
                        let dvj = &mut dv[j * d + off..j * d + off + dh];
                        for (a, &b) in dvj.iter_mut().zip(g) {
                            *a += pj * b;
                        }
                    }
                }
                let weighted = dot(&dprobs, probs);
                for j in 0..n {
                    let ds = probs[j] * (dprobs[j] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for c in 0..dh {
                        dq[i * d + off + c] += ds * cache.k[j * d + off + c];
                        dk[j * d + off + c] += ds * cache.q[i * d + off + c];
                    }
                }
            }
        }
        matmul_tn_acc(&cache.z, &dq, n, d, d, grad.wq.data_mut());
        matmul_tn_acc(&cache.z, &dk, n, d, d, grad.wk.data_mut());
        matmul_tn_acc(&cache.z, &dv, n, d, d, grad.wv.data_mut());
        let mut dz = matmul_nt(&dq, self.wq.data(), n, d, d);
        add_assign(&mut dz, &matmul_nt(&dk, self.wk.data(), n, d, d));
        add_assign(&mut dz, &matmul_nt(&dv, self.wv.data(), n, d, d));
        let mut dp = self.ln1.backward(&cache.ln1, &dz, &mut grad.ln1);
        add_assign(&mut dp, &dp_hat);
        dp
    }
}

/// Per-head weighted sum of value rows, concatenated over heads.
fn mix_values<T: Scalar>(probs: &[T], v: &[T], n: usize, d: usize, heads: usize) -> Vec<T> {
    let dh = d / heads;
    let mut out = vec![T::zero(); n * d];
    for hd in 0..heads {
        let off = hd * dh;
        for i in 0..n {
            let row = &probs[(hd * n + i) * n..(hd * n + i + 1) * n];
            let o = &mut out[i * d + off..i * d + off + dh];
            for (j, &pj) in row.iter().enumerate() {
                for (a, &b) in o.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                    *a += pj * b;
                }
            }
        }
    }
    out
}
