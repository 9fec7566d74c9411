//! Differentiable primitives. Each forward method on [`Graph`] records one
//! [`Op`]; `Op::backward` maps the output adjoint to input adjoints.

use rand::Rng;

use super::graph::{Graph, Node, Var};
use super::{strides, Tensor};
use crate::error::{NialError, Result};

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddTrailing(Var, Var),
    Sum(Var),
    Mean(Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        src: Vec<usize>,
    },
    Matmul(Var, Var),
    Bmm(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mask {
        x: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    BinaryCrossEntropy {
        logits: Var,
        labels: Vec<f64>,
    },
}

fn dim_err<T>(msg: String) -> Result<T> {
    Err(NialError::Dimension(msg))
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// out[n] = a[n] · b[n] for n in 0..batch; a is m×k, b is k×p.
fn bmm_kernel(a: &[f64], b: &[f64], batch: usize, m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * p];
    for n in 0..batch {
        let a = &a[n * m * k..(n + 1) * m * k];
        let b = &b[n * k * p..(n + 1) * k * p];
        let o = &mut out[n * m * p..(n + 1) * m * p];
        for i in 0..m {
            let orow = &mut o[i * p..(i + 1) * p];
            for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
                let brow = &b[kk * p..(kk + 1) * p];
                for (ov, bv) in orow.iter_mut().zip(brow) {
                    *ov += aik * bv;
                }
            }
        }
    }
    out
}

/// Gradients of `bmm_kernel` given the output adjoint.
fn bmm_backward(
    a: &[f64],
    b: &[f64],
    g: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    p: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut da = vec![0.0; a.len()];
    let mut db = vec![0.0; b.len()];
    for n in 0..batch {
        let a = &a[n * m * k..(n + 1) * m * k];
        let b = &b[n * k * p..(n + 1) * k * p];
        let g = &g[n * m * p..(n + 1) * m * p];
        let da = &mut da[n * m * k..(n + 1) * m * k];
        let db = &mut db[n * k * p..(n + 1) * k * p];
        for i in 0..m {
            let grow = &g[i * p..(i + 1) * p];
            for kk in 0..k {
                let brow = &b[kk * p..(kk + 1) * p];
                da[i * k + kk] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                let aik = a[i * k + kk];
                for (dv, gv) in db[kk * p..(kk + 1) * p].iter_mut().zip(grow) {
                    *dv += aik * gv;
                }
            }
        }
    }
    (da, db)
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Output length of a strided window sweep, or `None` if the window does not fit.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub fn pool_out_len(len: usize, window: usize, stride: usize) -> Option<usize> {
    conv_out_len(len, window, stride, 0)
}

impl Graph {
    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut out = self.value(x).clone();
        out.grad = None;
        out.data.iter_mut().for_each(|v| *v *= c);
        self.push(out, Op::Scale(x, c))
    }

    /// `x + y` where `y`'s shape equals the trailing dimensions of `x`
    /// (bias add, positional encodings).
    pub fn add_trailing(&mut self, x: Var, y: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ys = self.shape(y);
        if ys.len() > xs.len() || xs[xs.len() - ys.len()..] != *ys {
            return dim_err(format!(
                "cannot broadcast {ys:?} over trailing dims of {xs:?}"
            ));
        }
        let yd = self.data(y);
        let ny = yd.len();
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(j, v)| v + yd[j % ny])
            .collect();
        let out = Tensor::from_vec(xs.to_vec(), data)?;
        Ok(self.push(out, Op::AddTrailing(x, y)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return dim_err(format!("mean axis {axis} out of range for {shape:?}"));
        }
        let (outer, n, inner) = around_axis(&shape, axis);
        let d = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let base = (o * n + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let mut oshape = shape;
        oshape.remove(axis);
        let t = Tensor::from_vec(oshape, out)?;
        Ok(self.push(t, Op::MeanAxis { x, axis }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        let mut seen = vec![false; r];
        if axes.len() != r
            || axes
                .iter()
                .any(|&a| a >= r || std::mem::replace(&mut seen[a], true))
        {
            return dim_err(format!("invalid permutation {axes:?} for {shape:?}"));
        }
        let in_strides = strides(&shape);
        let oshape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let n = self.value(x).numel();
        let mut src = Vec::with_capacity(n);
        let mut idx = vec![0usize; r];
        for _ in 0..n {
            src.push(
                idx.iter()
                    .zip(axes)
                    .map(|(i, &a)| i * in_strides[a])
                    .sum::<usize>(),
            );
            for d in (0..r).rev() {
                idx[d] += 1;
                if idx[d] < oshape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let d = self.data(x);
        let data = src.iter().map(|&s| d[s]).collect();
        let t = Tensor::from_vec(oshape, data)?;
        Ok(self.push(t, Op::Permute { x, src }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return dim_err(format!(
                "transpose needs rank >= 2, got {:?}",
                self.shape(x)
            ));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err(format!("matmul: incompatible shapes {sa:?} and {sb:?}"));
        }
        let (m, k, p) = (sa[0], sa[1], sb[1]);
        let data = bmm_kernel(self.data(a), self.data(b), 1, m, k, p);
        let t = Tensor::from_vec(vec![m, p], data)?;
        Ok(self.push(t, Op::Matmul(a, b)))
    }

    /// Batched matrix product over the leading axis: [N×M×K]·[N×K×P].
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return dim_err(format!("bmm: incompatible shapes {sa:?} and {sb:?}"));
        }
        let (n, m, k, p) = (sa[0], sa[1], sa[2], sb[2]);
        let data = bmm_kernel(self.data(a), self.data(b), n, m, k, p);
        let t = Tensor::from_vec(vec![n, m, p], data)?;
        Ok(self.push(t, Op::Bmm(a, b)))
    }

    /// 1-D cross-correlation (no kernel flip) over [B×Cin×L] with weights
    /// [Cout×Cin×K] and bias [Cout].
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 3 || sw.len() != 3 || sw[1] != sx[1] || sb != [sw[0]] {
            return dim_err(format!(
                "conv1d: input {sx:?}, weight {sw:?}, bias {sb:?} are incompatible"
            ));
        }
        let (bsz, cin, len) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        let Some(lout) = conv_out_len(len, k, stride, padding) else {
            return dim_err(format!(
                "conv1d: kernel {k} with stride {stride} does not fit length {len} padded by {padding}"
            ));
        };
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        let mut out = vec![0.0; bsz * cout * lout];
        for bi in 0..bsz {
            for o in 0..cout {
                let orow = &mut out[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                orow.iter_mut().for_each(|v| *v = bd[o]);
                for c in 0..cin {
                    let xrow = &xd[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                    let wrow = &wd[(o * cin + c) * k..(o * cin + c + 1) * k];
                    for (t, ov) in orow.iter_mut().enumerate() {
                        let start = (t * stride) as isize - padding as isize;
                        for (kk, wv) in wrow.iter().enumerate() {
                            let pos = start + kk as isize;
                            if pos >= 0 && (pos as usize) < len {
                                *ov += wv * xrow[pos as usize];
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::from_vec(vec![bsz, cout, lout], out)?;
        Ok(self.push(
            t,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            },
        ))
    }

    /// Max over sliding windows of [B×C×L]; ties resolve to the lowest index.
    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 3 {
            return dim_err(format!("maxpool1d: expected [B, C, L], got {sx:?}"));
        }
        let (bsz, ch, len) = (sx[0], sx[1], sx[2]);
        let Some(lout) = pool_out_len(len, window, stride) else {
            return dim_err(format!(
                "maxpool1d: window {window} (stride {stride}) does not fit length {len}"
            ));
        };
        let xd = self.data(x);
        let mut out = Vec::with_capacity(bsz * ch * lout);
        let mut argmax = Vec::with_capacity(bsz * ch * lout);
        for row in 0..bsz * ch {
            let base = row * len;
            for t in 0..lout {
                let start = base + t * stride;
                let mut best = start;
                for j in start + 1..start + window {
                    // First maximum wins; a NaN anywhere in the window
                    // propagates so divergence is not masked.
                    if !xd[best].is_nan() && (xd[j] > xd[best] || xd[j].is_nan()) {
                        best = j;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        let t = Tensor::from_vec(vec![bsz, ch, lout], out)?;
        Ok(self.push(t, Op::MaxPool1d { x, argmax }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.grad = None;
        // `f64::max` would turn NaN into 0 and hide divergence.
        out.data.iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v = 0.0
            }
        });
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.grad = None;
        out.data.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
        self.push(out, Op::Sigmoid(x))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return dim_err(format!("softmax axis {axis} out of range for {shape:?}"));
        }
        let (outer, n, inner) = around_axis(&shape, axis);
        let mut out = self.data(x).to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let max = (0..n).map(|a| out[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..n {
                    let e = (out[at(a)] - max).exp();
                    out[at(a)] = e;
                    z += e;
                }
                for a in 0..n {
                    out[at(a)] /= z;
                }
            }
        }
        let t = Tensor::from_vec(shape, out)?;
        Ok(self.push(t, Op::Softmax { x, axis }))
    }

    /// Normalizes each last-axis slice to zero mean and unit population
    /// variance (`eps` inside the square root), then applies `gamma`/`beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| NialError::Dimension("layernorm on a scalar".into()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return dim_err(format!(
                "layernorm: gamma {:?} / beta {:?} do not match last dim {d}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let (xd, gd, bd) = (self.data(x), self.data(gamma), self.data(beta));
        let rows = xd.len() / d;
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let s = &xd[r * d..(r + 1) * d];
            let mu = s.iter().sum::<f64>() / d as f64;
            let var = s.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (s[j] - mu) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gd[j] * h + bd[j];
            }
        }
        let t = Tensor::from_vec(shape, out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Elementwise product with a fixed mask (no gradient to the mask).
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return dim_err(format!(
                "mask of {} values for tensor {:?}",
                mask.len(),
                self.shape(x)
            ));
        }
        let data = self.data(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::from_vec(self.shape(x).to_vec(), data)?;
        Ok(self.push(t, Op::Mask { x, mask }))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`. `p == 0` returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NialError::Contract(format!("dropout p={p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mask(x, mask)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn categorical_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return dim_err(format!(
                "cross-entropy: logits {s:?} vs {} labels",
                labels.len()
            ));
        }
        let (b, k) = (s[0], s[1]);
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(NialError::Label(format!(
                "label {l} at row {row} outside [0, {k})"
            )));
        }
        let z = self.data(logits);
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for r in 0..b {
            let row = &z[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let se: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + se.ln();
            loss += lse - row[labels[r]];
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
        }
        let t = Tensor::scalar(loss / b as f64);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Mean binary cross-entropy on raw logits of shape [B×1] (or [B]).
    pub fn binary_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        let ok = match s {
            [b] => *b == labels.len(),
            [b, 1] => *b == labels.len(),
            _ => false,
        };
        if !ok {
            return dim_err(format!(
                "binary cross-entropy: logits {s:?} vs {} labels",
                labels.len()
            ));
        }
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
            return Err(NialError::Label(format!(
                "non-binary label {l} at row {row}"
            )));
        }
        let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let z = self.data(logits);
        // max(z,0) - z*y + ln(1 + e^{-|z|})
        let loss: f64 = z
            .iter()
            .zip(&y)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let t = Tensor::scalar(loss / y.len() as f64);
        Ok(self.push(t, Op::BinaryCrossEntropy { logits, labels: y }))
    }
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Mul(a, b)
            | Op::AddTrailing(a, b)
            | Op::Matmul(a, b)
            | Op::Bmm(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::MeanAxis { x, .. }
            | Op::Permute { x, .. }
            | Op::MaxPool1d { x, .. }
            | Op::Softmax { x, .. }
            | Op::Mask { x, .. } => vec![*x],
            Op::Conv1d { x, w, b, .. } => vec![*x, *w, *b],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::CrossEntropy { logits, .. } | Op::BinaryCrossEntropy { logits, .. } => {
                vec![*logits]
            }
        }
    }

    /// Adjoints of this op's inputs given the adjoint `g` of node `me`.
    pub(crate) fn backward(&self, nodes: &[Node], me: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: &Var| &nodes[v.0].value;
        let out = &nodes[me].value;
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let (ad, bd) = (val(a).data(), val(b).data());
                vec![
                    (*a, g.iter().zip(bd).map(|(g, y)| g * y).collect()),
                    (*b, g.iter().zip(ad).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::Scale(x, c) => vec![(*x, g.iter().map(|v| v * c).collect())],
            Op::AddTrailing(x, y) => {
                let ny = val(y).numel();
                let mut dy = vec![0.0; ny];
                for (j, gv) in g.iter().enumerate() {
                    dy[j % ny] += gv;
                }
                vec![(*x, g.to_vec()), (*y, dy)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; val(x).numel()])],
            Op::Mean(x) => {
                let n = val(x).numel();
                vec![(*x, vec![g[0] / n as f64; n])]
            }
            Op::MeanAxis { x, axis } => {
                let (outer, n, inner) = around_axis(val(x).shape(), *axis);
                let mut dx = vec![0.0; val(x).numel()];
                for o in 0..outer {
                    for a in 0..n {
                        for i in 0..inner {
                            dx[(o * n + a) * inner + i] = g[o * inner + i] / n as f64;
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Permute { x, src } => {
                let mut dx = vec![0.0; g.len()];
                for (j, &s) in src.iter().enumerate() {
                    dx[s] += g[j];
                }
                vec![(*x, dx)]
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (val(a).shape(), val(b).shape());
                let (da, db) =
                    bmm_backward(val(a).data(), val(b).data(), g, 1, sa[0], sa[1], sb[1]);
                vec![(*a, da), (*b, db)]
            }
            Op::Bmm(a, b) => {
                let (sa, sb) = (val(a).shape(), val(b).shape());
                let (da, db) =
                    bmm_backward(val(a).data(), val(b).data(), g, sa[0], sa[1], sa[2], sb[2]);
                vec![(*a, da), (*b, db)]
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (sx, sw) = (val(x).shape(), val(w).shape());
                let (bsz, cin, len) = (sx[0], sx[1], sx[2]);
                let (cout, k) = (sw[0], sw[2]);
                let lout = out.shape()[2];
                let (xd, wd) = (val(x).data(), val(w).data());
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; wd.len()];
                let mut db = vec![0.0; cout];
                for bi in 0..bsz {
                    for o in 0..cout {
                        let grow = &g[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                        db[o] += grow.iter().sum::<f64>();
                        for c in 0..cin {
                            let xoff = (bi * cin + c) * len;
                            let woff = (o * cin + c) * k;
                            for (t, gv) in grow.iter().enumerate() {
                                let start = (t * stride) as isize - *padding as isize;
                                for kk in 0..k {
                                    let pos = start + kk as isize;
                                    if pos >= 0 && (pos as usize) < len {
                                        let p = xoff + pos as usize;
                                        dx[p] += gv * wd[woff + kk];
                                        dw[woff + kk] += gv * xd[p];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::MaxPool1d { x, argmax } => {
                let mut dx = vec![0.0; val(x).numel()];
                for (gv, &src) in g.iter().zip(argmax) {
                    dx[src] += gv;
                }
                vec![(*x, dx)]
            }
            Op::Relu(x) => vec![(
                *x,
                g.iter()
                    .zip(val(x).data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect(),
            )],
            Op::Sigmoid(x) => vec![(
                *x,
                g.iter()
                    .zip(out.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect(),
            )],
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = around_axis(out.shape(), *axis);
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * n + a) * inner + i;
                        let dot: f64 = (0..n).map(|a| g[at(a)] * y[at(a)]).sum();
                        for a in 0..n {
                            dx[at(a)] = y[at(a)] * (g[at(a)] - dot);
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gd = val(gamma).data();
                let d = gd.len();
                let rows = xhat.len() / d;
                let mut dx = vec![0.0; xhat.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut sum = 0.0;
                    let mut sum_h = 0.0;
                    for j in 0..d {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        dxhat[j] = gr[j] * gd[j];
                        sum += dxhat[j];
                        sum_h += dxhat[j] * hr[j];
                    }
                    let scale = inv_std[r] / d as f64;
                    for j in 0..d {
                        dx[r * d + j] = scale * (d as f64 * dxhat[j] - sum - hr[j] * sum_h);
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Mask { x, mask } => vec![(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect())],
            Op::CrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let b = labels.len();
                let k = probs.len() / b;
                let scale = g[0] / b as f64;
                let mut dz: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    dz[r * k + l] -= scale;
                }
                vec![(*logits, dz)]
            }
            Op::BinaryCrossEntropy { logits, labels } => {
                let scale = g[0] / labels.len() as f64;
                let dz = val(logits)
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| (sigmoid_scalar(z) - y) * scale)
                    .collect();
                vec![(*logits, dz)]
            }
        }
    }
}
