//! Reverse-mode tape. Every forward op records what its backward pass
//! needs; `backward` walks the tape once in reverse.

use std::f64::consts::{LN_10, PI};
use std::sync::Arc;

use rustfft::num_complex::Complex64;

use super::scalar::{gemm, MatMut, MatRef, Scalar};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::signal::StftPlan;

/// Upper bound on reported SI-SDR, replacing +inf for exact estimates.
pub const SI_SDR_CAP_DB: f64 = 60.0;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        cols: Option<Vec<T>>,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        axis: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Relu(Var),
    Softmax(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    Narrow {
        x: Var,
        start: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    NegSiSdr {
        est: Var,
        dloss: Vec<T>,
    },
    Mean(Vec<Var>),
    IstftMagnitude {
        x: Var,
        plan: Arc<StftPlan>,
        phase: Arc<Vec<Complex64>>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv1d { .. } => "conv1d",
            Op::ConvTranspose1d { .. } => "conv_transpose1d",
            Op::Linear { .. } => "linear",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(_) => "gelu",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Transpose(_) => "transpose",
            Op::Narrow { .. } => "narrow",
            Op::Attention { .. } => "attention",
            Op::NegSiSdr { .. } => "neg_si_sdr",
            Op::Mean(_) => "mean",
            Op::IstftMagnitude { .. } => "istft_magnitude",
        }
    }
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// A single-use computation tape.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Scalar>(op: &str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op: op.to_string() })
    }
}

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(1.0 / (2.0 * PI).sqrt());
    cdf + x * pdf
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Result<Var> {
        check_finite(op.name(), value.data())?;
        self.nodes.push(Node {
            value: Arc::new(value),
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that takes no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, false, Op::Leaf)
    }

    /// Leaf that accumulates a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, true, Op::Leaf)
    }

    /// Gradient-tracking leaf sharing storage with a parameter store.
    pub fn param(&mut self, t: Arc<Tensor<T>>) -> Var {
        self.nodes.push(Node {
            value: t,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    /// `x (C_in, L)`, `w (C_out, C_in, K)`, optional `b (C_out)`; cross-correlation.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv1d";
        let (cin, len) = self.value(x).dims2(OP)?;
        let (cout, wcin, k) = self.value(w).dims3(OP)?;
        if wcin != cin {
            return Err(Error::shape(OP, format!("input has {cin} channels, weight expects {wcin}")));
        }
        if stride == 0 {
            return Err(Error::shape(OP, "stride must be positive"));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::shape(OP, format!("bias shape {:?}, expected [{cout}]", self.value(b).shape())));
            }
        }
        let padded = len + 2 * padding;
        if padded < k {
            return Err(Error::shape(OP, format!("padded length {padded} shorter than kernel {k}")));
        }
        let lout = (padded - k) / stride + 1;
        let xd = self.value(x).data();
        let direct = k == 1 && stride == 1 && padding == 0;
        let cols = if direct {
            None
        } else {
            let mut cols = vec![T::zero(); cin * k * lout];
            for c in 0..cin {
                for kk in 0..k {
                    let row = &mut cols[(c * k + kk) * lout..(c * k + kk + 1) * lout];
                    for (t, dst) in row.iter_mut().enumerate() {
                        let pos = t * stride + kk;
                        if pos >= padding && pos - padding < len {
                            *dst = xd[c * len + pos - padding];
                        }
                    }
                }
            }
            Some(cols)
        };
        let mut y = vec![T::zero(); cout * lout];
        {
            let src = cols.as_deref().unwrap_or(xd);
            gemm(
                cout,
                cin * k,
                lout,
                T::one(),
                MatRef::rows(self.value(w).data(), cin * k),
                MatRef::rows(src, lout),
                T::zero(),
                MatMut::rows(&mut y, lout),
            );
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for (o, row) in y.chunks_mut(lout).enumerate() {
                row.iter_mut().for_each(|v| *v += bd[o]);
            }
        }
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        self.push(
            Tensor::new(&[cout, lout], y)?,
            rg,
            Op::Conv1d { x, w, b, stride, padding, cols },
        )
    }

    /// `x (C_in, M)`, `w (C_in, C_out, K)` -> `(C_out, (M-1)*stride + K)`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        const OP: &str = "conv_transpose1d";
        let (cin, m) = self.value(x).dims2(OP)?;
        let (wcin, cout, k) = self.value(w).dims3(OP)?;
        if wcin != cin {
            return Err(Error::shape(OP, format!("input has {cin} channels, weight expects {wcin}")));
        }
        if stride == 0 {
            return Err(Error::shape(OP, "stride must be positive"));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::shape(OP, format!("bias shape {:?}, expected [{cout}]", self.value(b).shape())));
            }
        }
        let lout = (m - 1) * stride + k;
        let mut cols = vec![T::zero(); cout * k * m];
        gemm(
            cout * k,
            cin,
            m,
            T::one(),
            MatRef::rows_t(self.value(w).data(), cout * k),
            MatRef::rows(self.value(x).data(), m),
            T::zero(),
            MatMut::rows(&mut cols, m),
        );
        let mut y = vec![T::zero(); cout * lout];
        for o in 0..cout {
            let yrow = &mut y[o * lout..(o + 1) * lout];
            for kk in 0..k {
                let crow = &cols[(o * k + kk) * m..(o * k + kk + 1) * m];
                for (t, &c) in crow.iter().enumerate() {
                    yrow[t * stride + kk] += c;
                }
            }
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for (o, row) in y.chunks_mut(lout).enumerate() {
                row.iter_mut().for_each(|v| *v += bd[o]);
            }
        }
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        self.push(Tensor::new(&[cout, lout], y)?, rg, Op::ConvTranspose1d { x, w, b, stride })
    }

    /// `x (N, in)`, `w (out, in)`, optional `b (out)`: `x w^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        const OP: &str = "linear";
        let (n, din) = self.value(x).dims2(OP)?;
        let (dout, win) = self.value(w).dims2(OP)?;
        if win != din {
            return Err(Error::shape(OP, format!("input width {din}, weight expects {win}")));
        }
        let mut y = vec![T::zero(); n * dout];
        gemm(
            n,
            din,
            dout,
            T::one(),
            MatRef::rows(self.value(x).data(), din),
            MatRef::rows_t(self.value(w).data(), din),
            T::zero(),
            MatMut::rows(&mut y, dout),
        );
        if let Some(b) = b {
            let bd = self.value(b).data();
            if bd.len() != dout {
                return Err(Error::shape(OP, format!("bias length {}, expected {dout}", bd.len())));
            }
            for row in y.chunks_mut(dout) {
                row.iter_mut().zip(bd).for_each(|(v, &bb)| *v += bb);
            }
        }
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        self.push(Tensor::new(&[n, dout], y)?, rg, Op::Linear { x, w, b })
    }

    /// Normalizes a rank-2 tensor along `axis` (0 or 1), then applies the
    /// per-element affine `gain * xhat + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, axis: usize, eps: f64) -> Result<Var> {
        const OP: &str = "layer_norm";
        let (r, c) = self.value(x).dims2(OP)?;
        if axis > 1 {
            return Err(Error::shape(OP, format!("axis {axis} out of range for rank 2")));
        }
        let (groups, width) = if axis == 1 { (r, c) } else { (c, r) };
        for p in [gain, bias] {
            if self.value(p).shape() != [width] {
                return Err(Error::shape(
                    OP,
                    format!("affine shape {:?}, expected [{width}]", self.value(p).shape()),
                ));
            }
        }
        let idx = |g: usize, e: usize| if axis == 1 { g * c + e } else { e * c + g };
        let xd = self.value(x).data();
        let gd = self.value(gain).data();
        let bd = self.value(bias).data();
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); groups];
        let mut y = vec![T::zero(); r * c];
        let inv_w = T::of(1.0 / width as f64);
        for g in 0..groups {
            let mean = (0..width).map(|e| xd[idx(g, e)]).sum::<T>() * inv_w;
            let var = (0..width).map(|e| (xd[idx(g, e)] - mean).powi(2)).sum::<T>() * inv_w;
            let rs = (var + T::of(eps)).sqrt().recip();
            rstd[g] = rs;
            for e in 0..width {
                let i = idx(g, e);
                let h = (xd[i] - mean) * rs;
                xhat[i] = h;
                y[i] = h * gd[e] + bd[e];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            Tensor::new(&[r, c], y)?,
            rg,
            Op::LayerNorm { x, gain, bias, axis, xhat, rstd },
        )
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let y = Tensor::new(t.shape(), t.data().iter().map(|&v| gelu_fwd(v)).collect())?;
        let rg = self.rg(&[x]);
        self.push(y, rg, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let y = Tensor::new(t.shape(), t.data().iter().map(|&v| v.max(T::zero())).collect())?;
        let rg = self.rg(&[x]);
        self.push(y, rg, Op::Relu(x))
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2("softmax")?;
        let mut y = self.value(x).data().to_vec();
        for row in y.chunks_mut(c) {
            softmax_row(row);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&[r, c], y)?, rg, Op::Softmax(x))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let y = ta.data().iter().zip(tb.data()).map(|(&p, &q)| p + q).collect();
        let y = Tensor::new(ta.shape(), y)?;
        let rg = self.rg(&[a, b]);
        self.push(y, rg, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let y = ta.data().iter().zip(tb.data()).map(|(&p, &q)| p * q).collect();
        let y = Tensor::new(ta.shape(), y)?;
        let rg = self.rg(&[a, b]);
        self.push(y, rg, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let t = self.value(x);
        let y = Tensor::new(t.shape(), t.data().iter().map(|&v| v * c).collect())?;
        let rg = self.rg(&[x]);
        self.push(y, rg, Op::Scale(x, c))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2("transpose")?;
        let y = transpose_data(self.value(x).data(), r, c);
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&[c, r], y)?, rg, Op::Transpose(x))
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2("narrow")?;
        if len == 0 || start + len > c {
            return Err(Error::shape("narrow", format!("columns {start}..{} of {c}", start + len)));
        }
        let xd = self.value(x).data();
        let y: Vec<T> = (0..r).flat_map(|i| xd[i * c + start..i * c + start + len].iter().copied()).collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&[r, len], y)?, rg, Op::Narrow { x, start })
    }

    /// Scaled dot-product attention over `heads` equal column groups of
    /// `q, k, v (M, D)`; heads are concatenated in the output.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        const OP: &str = "attention";
        let (m, d) = self.value(q).dims2(OP)?;
        self.same_shape(OP, q, k)?;
        self.same_shape(OP, q, v)?;
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape(OP, format!("width {d} not divisible by {heads} heads")));
        }
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); heads * m * m];
        let mut out = vec![T::zero(); m * d];
        for h in 0..heads {
            let p = &mut probs[h * m * m..(h + 1) * m * m];
            gemm(
                m,
                dh,
                m,
                scale,
                MatRef::rows(qd, d).at(h * dh),
                MatRef::rows_t(kd, d).at(h * dh),
                T::zero(),
                MatMut::rows(p, m),
            );
            p.chunks_mut(m).for_each(softmax_row);
            gemm(
                m,
                m,
                dh,
                T::one(),
                MatRef::rows(p, m),
                MatRef::rows(vd, d).at(h * dh),
                T::zero(),
                MatMut::rows(&mut out, d).at(h * dh),
            );
        }
        let rg = self.rg(&[q, k, v]);
        self.push(Tensor::new(&[m, d], out)?, rg, Op::Attention { q, k, v, heads, probs })
    }

    /// Negative scale-invariant SDR (dB) of `est` against a fixed target of
    /// the same element count. Capped at `-SI_SDR_CAP_DB` with zero gradient.
    pub fn neg_si_sdr(&mut self, est: Var, target: &[T]) -> Result<Var> {
        let e = self.value(est).data();
        if e.len() != target.len() {
            return Err(Error::shape("neg_si_sdr", format!("{} vs {} samples", e.len(), target.len())));
        }
        let (value, grad) = si_sdr_with_grad(e, target)?;
        let dloss = grad.into_iter().map(|g| T::of(-g)).collect();
        let rg = self.rg(&[est]);
        self.push(Tensor::scalar(T::of(-value)), rg, Op::NegSiSdr { est, dloss })
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::shape("mean", "no inputs"));
        }
        let mut acc = 0.0;
        for &x in xs {
            if self.value(x).numel() != 1 {
                return Err(Error::shape("mean", "inputs must be scalars"));
            }
            acc += self.value(x).data()[0].as_f64();
        }
        let rg = self.rg(xs);
        self.push(Tensor::scalar(T::of(acc / xs.len() as f64)), rg, Op::Mean(xs.to_vec()))
    }

    /// Overlap-add synthesis of magnitudes `x (bins, frames)` combined with
    /// fixed unit phasors stored frame-major; output is `(1, len)`.
    pub fn istft_magnitude(
        &mut self,
        x: Var,
        plan: Arc<StftPlan>,
        phase: Arc<Vec<Complex64>>,
        len: usize,
    ) -> Result<Var> {
        const OP: &str = "istft_magnitude";
        let (nb, frames) = self.value(x).dims2(OP)?;
        if nb != plan.n_bins() || phase.len() != nb * frames {
            return Err(Error::shape(OP, format!("{nb} bins x {frames} frames vs plan/phase")));
        }
        let xd = self.value(x).data();
        let mut y = vec![0.0; (frames - 1) * plan.hop() + plan.window_len()];
        let mut half = vec![Complex64::new(0.0, 0.0); nb];
        let mut frame = vec![0.0; plan.window_len()];
        let cola = plan.cola();
        for m in 0..frames {
            for (kk, hv) in half.iter_mut().enumerate() {
                *hv = phase[m * nb + kk] * xd[kk * frames + m].as_f64();
            }
            plan.inverse_frame(&half, &mut frame);
            for (o, f) in y[m * plan.hop()..].iter_mut().zip(&frame) {
                *o += f / cola;
            }
        }
        y.resize(len, 0.0);
        let out = Tensor::new(&[1, len], y.into_iter().map(T::of).collect())?;
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::IstftMagnitude { x, plan, phase })
    }

    /// Accumulates gradients of the scalar `loss` into every tracked node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward", "loss must be a scalar"));
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = node.grad.take() else { continue };
            let updates = local_backward(before, node, &gy)?;
            node.grad = Some(gy);
            for (v, g) in updates {
                check_finite(node.op.name(), &g)?;
                let target = &mut before[v.0];
                match &mut target.grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => target.grad = Some(Tensor::new(target.value.shape(), g)?),
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_row<T: Scalar>(row: &mut [T]) {
    let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    let inv = s.recip();
    row.iter_mut().for_each(|v| *v *= inv);
}

fn transpose_data<T: Scalar>(d: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    out
}

/// SI-SDR (dB) and its gradient with respect to `est`, accumulated in f64.
pub(crate) fn si_sdr_with_grad<T: Scalar>(est: &[T], target: &[T]) -> Result<(f64, Vec<f64>)> {
    let tt: f64 = target.iter().map(|t| t.as_f64().powi(2)).sum();
    if tt <= 0.0 {
        return Err(Error::UndefinedMetric("target signal is all zeros".into()));
    }
    let et: f64 = est.iter().zip(target).map(|(e, t)| e.as_f64() * t.as_f64()).sum();
    let alpha = et / tt;
    let proj = et * et / tt;
    // ||alpha t - e||^2 computed directly for accuracy near the cap.
    let resid: f64 = est
        .iter()
        .zip(target)
        .map(|(e, t)| (alpha * t.as_f64() - e.as_f64()).powi(2))
        .sum();
    if resid <= 1e-12 * proj {
        return Ok((SI_SDR_CAP_DB, vec![0.0; est.len()]));
    }
    if proj <= 1e-12 * resid {
        return Ok((-SI_SDR_CAP_DB, vec![0.0; est.len()]));
    }
    let value = 10.0 * (proj / resid).log10();
    let k = 10.0 / LN_10;
    // d/de ln(proj) = 2 s / proj, d/de ln(resid) = -2 n / resid,
    // with s = alpha t and n = s - e.
    let grad = est
        .iter()
        .zip(target)
        .map(|(e, t)| {
            let s = alpha * t.as_f64();
            let n = s - e.as_f64();
            k * (2.0 * s / proj + 2.0 * n / resid)
        })
        .collect();
    Ok((value, grad))
}

type Updates<T> = Vec<(Var, Vec<T>)>;

fn local_backward<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, gy: &Tensor<T>) -> Result<Updates<T>> {
    let val = |v: Var| -> &Tensor<T> { &nodes[v.0].value };
    let rg = |v: Var| nodes[v.0].requires_grad;
    let g = gy.data();
    let mut out: Updates<T> = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::Conv1d { x, w, b, stride, padding, cols } => {
            let (cin, len) = val(*x).dims2("conv1d")?;
            let (cout, _, k) = val(*w).dims3("conv1d")?;
            let lout = g.len() / cout;
            let src = cols.as_deref().unwrap_or(val(*x).data());
            if rg(*w) {
                let mut dw = vec![T::zero(); cout * cin * k];
                gemm(
                    cout,
                    lout,
                    cin * k,
                    T::one(),
                    MatRef::rows(g, lout),
                    MatRef::rows_t(src, lout),
                    T::zero(),
                    MatMut::rows(&mut dw, cin * k),
                );
                out.push((*w, dw));
            }
            if let Some(b) = b.filter(|b| rg(*b)) {
                out.push((b, g.chunks(lout).map(|r| r.iter().copied().sum()).collect()));
            }
            if rg(*x) {
                let mut dcols = vec![T::zero(); cin * k * lout];
                gemm(
                    cin * k,
                    cout,
                    lout,
                    T::one(),
                    MatRef::rows_t(val(*w).data(), cin * k),
                    MatRef::rows(g, lout),
                    T::zero(),
                    MatMut::rows(&mut dcols, lout),
                );
                if cols.is_none() {
                    out.push((*x, dcols));
                } else {
                    let mut dx = vec![T::zero(); cin * len];
                    for c in 0..cin {
                        for kk in 0..k {
                            let row = &dcols[(c * k + kk) * lout..(c * k + kk + 1) * lout];
                            for (t, &dv) in row.iter().enumerate() {
                                let pos = t * stride + kk;
                                if pos >= *padding && pos - padding < len {
                                    dx[c * len + pos - padding] += dv;
                                }
                            }
                        }
                    }
                    out.push((*x, dx));
                }
            }
        }
        Op::ConvTranspose1d { x, w, b, stride } => {
            let (cin, m) = val(*x).dims2("conv_transpose1d")?;
            let (_, cout, k) = val(*w).dims3("conv_transpose1d")?;
            let lout = g.len() / cout;
            let mut dcols = vec![T::zero(); cout * k * m];
            for o in 0..cout {
                for kk in 0..k {
                    let row = &mut dcols[(o * k + kk) * m..(o * k + kk + 1) * m];
                    for (t, dst) in row.iter_mut().enumerate() {
                        *dst = g[o * lout + t * stride + kk];
                    }
                }
            }
            if rg(*x) {
                let mut dx = vec![T::zero(); cin * m];
                gemm(
                    cin,
                    cout * k,
                    m,
                    T::one(),
                    MatRef::rows(val(*w).data(), cout * k),
                    MatRef::rows(&dcols, m),
                    T::zero(),
                    MatMut::rows(&mut dx, m),
                );
                out.push((*x, dx));
            }
            if rg(*w) {
                let mut dw = vec![T::zero(); cin * cout * k];
                gemm(
                    cin,
                    m,
                    cout * k,
                    T::one(),
                    MatRef::rows(val(*x).data(), m),
                    MatRef::rows_t(&dcols, m),
                    T::zero(),
                    MatMut::rows(&mut dw, cout * k),
                );
                out.push((*w, dw));
            }
            if let Some(b) = b.filter(|b| rg(*b)) {
                out.push((b, g.chunks(lout).map(|r| r.iter().copied().sum()).collect()));
            }
        }
        Op::Linear { x, w, b } => {
            let (n, din) = val(*x).dims2("linear")?;
            let (dout, _) = val(*w).dims2("linear")?;
            if rg(*x) {
                let mut dx = vec![T::zero(); n * din];
                gemm(
                    n,
                    dout,
                    din,
                    T::one(),
                    MatRef::rows(g, dout),
                    MatRef::rows(val(*w).data(), din),
                    T::zero(),
                    MatMut::rows(&mut dx, din),
                );
                out.push((*x, dx));
            }
            if rg(*w) {
                let mut dw = vec![T::zero(); dout * din];
                gemm(
                    dout,
                    n,
                    din,
                    T::one(),
                    MatRef::rows_t(g, dout),
                    MatRef::rows(val(*x).data(), din),
                    T::zero(),
                    MatMut::rows(&mut dw, din),
                );
                out.push((*w, dw));
            }
            if let Some(b) = b.filter(|b| rg(*b)) {
                let mut db = vec![T::zero(); dout];
                for row in g.chunks(dout) {
                    db.iter_mut().zip(row).for_each(|(a, &r)| *a += r);
                }
                out.push((b, db));
            }
        }
        Op::LayerNorm { x, gain, bias, axis, xhat, rstd } => {
            let (r, c) = val(*x).dims2("layer_norm")?;
            let (groups, width) = if *axis == 1 { (r, c) } else { (c, r) };
            let idx = |gi: usize, e: usize| if *axis == 1 { gi * c + e } else { e * c + gi };
            let gd = val(*gain).data();
            if rg(*gain) {
                let mut dg = vec![T::zero(); width];
                for gi in 0..groups {
                    for (e, d) in dg.iter_mut().enumerate() {
                        let i = idx(gi, e);
                        *d += g[i] * xhat[i];
                    }
                }
                out.push((*gain, dg));
            }
            if rg(*bias) {
                let mut db = vec![T::zero(); width];
                for gi in 0..groups {
                    for (e, d) in db.iter_mut().enumerate() {
                        *d += g[idx(gi, e)];
                    }
                }
                out.push((*bias, db));
            }
            if rg(*x) {
                let mut dx = vec![T::zero(); r * c];
                let inv_w = T::of(1.0 / width as f64);
                for gi in 0..groups {
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for e in 0..width {
                        let i = idx(gi, e);
                        let dh = g[i] * gd[e];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[i];
                    }
                    mean_dh *= inv_w;
                    mean_dh_h *= inv_w;
                    for e in 0..width {
                        let i = idx(gi, e);
                        let dh = g[i] * gd[e];
                        dx[i] = rstd[gi] * (dh - mean_dh - xhat[i] * mean_dh_h);
                    }
                }
                out.push((*x, dx));
            }
        }
        Op::Gelu(x) => {
            let xd = val(*x).data();
            out.push((*x, xd.iter().zip(g).map(|(&v, &d)| d * gelu_grad(v)).collect()));
        }
        Op::Relu(x) => {
            let xd = val(*x).data();
            out.push((
                *x,
                xd.iter()
                    .zip(g)
                    .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                    .collect(),
            ));
        }
        Op::Softmax(x) => {
            let (_, c) = val(*x).dims2("softmax")?;
            let y = node.value.data();
            let mut dx = vec![T::zero(); y.len()];
            for ((yr, gr), dr) in y.chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *d = yv * (gv - dot);
                }
            }
            out.push((*x, dx));
        }
        Op::Add(a, b) => {
            if rg(*a) {
                out.push((*a, g.to_vec()));
            }
            if rg(*b) {
                out.push((*b, g.to_vec()));
            }
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (val(*a).data(), val(*b).data());
            if rg(*a) {
                out.push((*a, g.iter().zip(bd).map(|(&d, &v)| d * v).collect()));
            }
            if rg(*b) {
                out.push((*b, g.iter().zip(ad).map(|(&d, &v)| d * v).collect()));
            }
        }
        Op::Scale(x, c) => {
            out.push((*x, g.iter().map(|&d| d * *c).collect()));
        }
        Op::Transpose(x) => {
            let (r, c) = val(*x).dims2("transpose")?;
            out.push((*x, transpose_data(g, c, r)));
        }
        Op::Narrow { x, start } => {
            let (r, c) = val(*x).dims2("narrow")?;
            let len = g.len() / r;
            let mut dx = vec![T::zero(); r * c];
            for i in 0..r {
                dx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
            }
            out.push((*x, dx));
        }
        Op::Attention { q, k, v, heads, probs } => {
            let (m, d) = val(*q).dims2("attention")?;
            let dh = d / heads;
            let scale = T::of(1.0 / (dh as f64).sqrt());
            let (qd, kd, vd) = (val(*q).data(), val(*k).data(), val(*v).data());
            let mut dq = vec![T::zero(); m * d];
            let mut dk = vec![T::zero(); m * d];
            let mut dv = vec![T::zero(); m * d];
            let mut dp = vec![T::zero(); m * m];
            for h in 0..*heads {
                let p = &probs[h * m * m..(h + 1) * m * m];
                let go = MatRef::rows(g, d).at(h * dh);
                // dV_h = P^T dO_h
                gemm(m, m, dh, T::one(), MatRef::rows_t(p, m), go, T::zero(), MatMut::rows(&mut dv, d).at(h * dh));
                // dP = dO_h V_h^T
                gemm(m, dh, m, T::one(), go, MatRef::rows_t(vd, d).at(h * dh), T::zero(), MatMut::rows(&mut dp, m));
                for (pr, dr) in p.chunks(m).zip(dp.chunks_mut(m)) {
                    let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                    for (dv_, &pv) in dr.iter_mut().zip(pr) {
                        *dv_ = pv * (*dv_ - dot);
                    }
                }
                // dQ_h = scale dS K_h ; dK_h = scale dS^T Q_h
                gemm(m, m, dh, scale, MatRef::rows(&dp, m), MatRef::rows(kd, d).at(h * dh), T::zero(), MatMut::rows(&mut dq, d).at(h * dh));
                gemm(m, m, dh, scale, MatRef::rows_t(&dp, m), MatRef::rows(qd, d).at(h * dh), T::zero(), MatMut::rows(&mut dk, d).at(h * dh));
            }
            if rg(*q) {
                out.push((*q, dq));
            }
            if rg(*k) {
                out.push((*k, dk));
            }
            if rg(*v) {
                out.push((*v, dv));
            }
        }
        Op::NegSiSdr { est, dloss } => {
            let s = g[0];
            out.push((*est, dloss.iter().map(|&d| d * s).collect()));
        }
        Op::Mean(xs) => {
            let s = g[0] * T::of(1.0 / xs.len() as f64);
            for &x in xs {
                if rg(x) {
                    out.push((x, vec![s]));
                }
            }
        }
        Op::IstftMagnitude { x, plan, phase } => {
            let (nb, frames) = val(*x).dims2("istft_magnitude")?;
            let gy: Vec<f64> = g.iter().map(|v| v.as_f64()).collect();
            let adj = plan.synthesis_magnitude_adjoint(phase, frames, &gy);
            let mut dx = vec![T::zero(); nb * frames];
            for m in 0..frames {
                for kk in 0..nb {
                    dx[kk * frames + m] = T::of(adj[m * nb + kk]);
                }
            }
            out.push((*x, dx));
        }
    }
    Ok(out.into_iter().filter(|(v, _)| rg(*v)).collect())
}
