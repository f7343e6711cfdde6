//! Central finite-difference checks of every differentiable op, in double
//! precision.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::graph::{Graph, Var};
use super::layers::{multihead_self_attention, AttentionParams};
use super::tensor::Tensor;
use crate::error::Result;
use crate::signal::StftPlan;

/// Worst relative gradient error observed for one op.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn project(g: &mut Graph<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    if g.value(y).numel() == 1 {
        return Ok(y);
    }
    let (r, c) = g.value(y).dims2("gradcheck")?;
    let w = g.constant(weights.clone())?;
    let z = g.mul(y, w)?;
    let ones_c = g.constant(Tensor::full(&[1, c], 1.0))?;
    let col = g.linear(z, ones_c, None)?;
    let row = g.transpose(col)?;
    let ones_r = g.constant(Tensor::full(&[1, r], 1.0))?;
    g.linear(row, ones_r, None)
}

fn loss_value(inputs: &[Tensor<f64>], build: &Build, weights: &Tensor<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let y = build(&mut g, &vars)?;
    let l = project(&mut g, y, weights)?;
    Ok(g.value(l).data()[0])
}

/// Relative error `|analytic - numeric| / max(|analytic|, |numeric|)` over
/// the concatenated gradient of all inputs.
pub fn check_gradients(inputs: &[Tensor<f64>], build: &Build, rng: &mut impl Rng) -> Result<f64> {
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.variable(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let y = build(&mut g, &vars)?;
    let weights = Tensor::from_fn(g.value(y).shape(), |_| rng.gen_range(-1.0..1.0));
    let l = project(&mut g, y, &weights)?;
    g.backward(l)?;
    let analytic: Vec<f64> = vars
        .iter()
        .zip(inputs)
        .flat_map(|(&v, t)| match g.grad(v) {
            Some(gr) => gr.data().to_vec(),
            None => vec![0.0; t.numel()],
        })
        .collect();

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            let h = 1e-5 * x0.abs().max(1.0);
            probe[i].data_mut()[j] = x0 + h;
            let up = loss_value(&probe, build, &weights)?;
            probe[i].data_mut()[j] = x0 - h;
            let down = loss_value(&probe, build, &weights)?;
            probe[i].data_mut()[j] = x0;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let diff = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm_a = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let norm_n = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = norm_a.max(norm_n);
    Ok(if scale == 0.0 { 0.0 } else { diff / scale })
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

// Values bounded away from the ReLU kink.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Runs `instances` random checks for every op and composite.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut record = |op: &'static str, errs: Vec<f64>| {
        out.push(GradCheck {
            op,
            instances: errs.len(),
            max_rel_err: errs.into_iter().fold(0.0, f64::max),
        })
    };

    let mut errs = Vec::new();
    for i in 0..instances {
        let cin = rng.gen_range(1..4);
        let cout = rng.gen_range(1..4);
        let k = rng.gen_range(1..5);
        let stride = rng.gen_range(1..4);
        let pad = i % 3;
        let len = k + rng.gen_range(0..7);
        let x = rand_t(&mut rng, &[cin, len]);
        let w = rand_t(&mut rng, &[cout, cin, k]);
        let b = rand_t(&mut rng, &[cout]);
        let f = move |g: &mut Graph<f64>, v: &[Var]| g.conv1d(v[0], v[1], Some(v[2]), stride, pad);
        errs.push(check_gradients(&[x, w, b], &f, &mut rng)?);
    }
    record("conv1d", errs);

    let mut errs = Vec::new();
    for _ in 0..instances {
        let (cin, cout, len) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..8));
        let x = rand_t(&mut rng, &[cin, len]);
        let w = rand_t(&mut rng, &[cout, cin, 1]);
        let f = |g: &mut Graph<f64>, v: &[Var]| g.conv1d(v[0], v[1], None, 1, 0);
        errs.push(check_gradients(&[x, w], &f, &mut rng)?);
    }
    record("conv1d_pointwise", errs);

    let mut errs = Vec::new();
    for _ in 0..instances {
        let cin = rng.gen_range(1..4);
        let cout = rng.gen_range(1..4);
        let k = rng.gen_range(1..6);
        let stride = rng.gen_range(1..=k);
        let m = rng.gen_range(1..6);
        let x = rand_t(&mut rng, &[cin, m]);
        let w = rand_t(&mut rng, &[cin, cout, k]);
        let b = rand_t(&mut rng, &[cout]);
        let f = move |g: &mut Graph<f64>, v: &[Var]| g.conv_transpose1d(v[0], v[1], Some(v[2]), stride);
        errs.push(check_gradients(&[x, w, b], &f, &mut rng)?);
    }
    record("conv_transpose1d", errs);

    let mut errs = Vec::new();
    for _ in 0..instances {
        let (n, din, dout) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
        let x = rand_t(&mut rng, &[n, din]);
        let w = rand_t(&mut rng, &[dout, din]);
        let b = rand_t(&mut rng, &[dout]);
        let f = |g: &mut Graph<f64>, v: &[Var]| g.linear(v[0], v[1], Some(v[2]));
        errs.push(check_gradients(&[x, w, b], &f, &mut rng)?);
    }
    record("linear", errs);

    let mut errs = Vec::new();
    for i in 0..instances {
        let axis = i % 2;
        let (r, c) = (rng.gen_range(2..6), rng.gen_range(2..6));
        let width = if axis == 1 { c } else { r };
        let x = rand_t(&mut rng, &[r, c]);
        let gain = rand_t(&mut rng, &[width]);
        let bias = rand_t(&mut rng, &[width]);
        let f = move |g: &mut Graph<f64>, v: &[Var]| g.layer_norm(v[0], v[1], v[2], axis, 1e-5);
        errs.push(check_gradients(&[x, gain, bias], &f, &mut rng)?);
    }
    record("layer_norm", errs);

    let unary: [(&'static str, fn(&mut Graph<f64>, Var) -> Result<Var>); 4] = [
        ("gelu", |g, x| g.gelu(x)),
        ("relu", |g, x| g.relu(x)),
        ("softmax", |g, x| g.softmax(x)),
        ("transpose", |g, x| g.transpose(x)),
    ];
    for (name, op) in unary {
        let mut errs = Vec::new();
        for _ in 0..instances {
            let shape = [rng.gen_range(1..5), rng.gen_range(1..6)];
            let x = rand_away_from_zero(&mut rng, &shape);
            let f = move |g: &mut Graph<f64>, v: &[Var]| op(g, v[0]);
            errs.push(check_gradients(&[x], &f, &mut rng)?);
        }
        record(name, errs);
    }

    let binary: [(&'static str, fn(&mut Graph<f64>, Var, Var) -> Result<Var>); 2] =
        [("add", |g, a, b| g.add(a, b)), ("mul", |g, a, b| g.mul(a, b))];
    for (name, op) in binary {
        let mut errs = Vec::new();
        for _ in 0..instances {
            let shape = [rng.gen_range(1..5), rng.gen_range(1..5)];
            let a = rand_t(&mut rng, &shape);
            let b = rand_t(&mut rng, &shape);
            let f = move |g: &mut Graph<f64>, v: &[Var]| op(g, v[0], v[1]);
            errs.push(check_gradients(&[a, b], &f, &mut rng)?);
        }
        record(name, errs);
    }

    let mut errs = Vec::new();
    for _ in 0..instances {
        let c: f64 = rng.gen_range(-2.0..2.0);
        let shape = [rng.gen_range(1..4), rng.gen_range(1..4)];
        let x = rand_t(&mut rng, &shape);
        let f = move |g: &mut Graph<f64>, v: &[Var]| g.scale(v[0], c);
        errs.push(check_gradients(&[x], &f, &mut rng)?);
    }
    record("scale", errs);

    let mut errs = Vec::new();
    for _ in 0..instances {
        let (r, c) = (rng.gen_range(1..4), rng.gen_range(2..7));
        let start = rng.gen_range(0..c);
        let len = rng.gen_range(1..=c - start);
        let x = rand_t(&mut rng, &[r, c]);
        let f = move |g: &mut Graph<f64>, v: &[Var]| g.narrow(v[0], start, len);
        errs.push(check_gradients(&[x], &f, &mut rng)?);
    }
    record("narrow", errs);

    let mut errs = Vec::new();
    for _ in 0..instances {
        let heads = rng.gen_range(1..3);
        let d = heads * rng.gen_range(1..3);
        let m = rng.gen_range(1..5);
        let q = rand_t(&mut rng, &[m, d]);
        let k = rand_t(&mut rng, &[m, d]);
        let v = rand_t(&mut rng, &[m, d]);
        let f = move |g: &mut Graph<f64>, v: &[Var]| g.attention(v[0], v[1], v[2], heads);
        errs.push(check_gradients(&[q, k, v], &f, &mut rng)?);
    }
    record("attention", errs);

    let mut errs = Vec::new();
    for _ in 0..instances {
        let heads = 2;
        let d = 4;
        let m = rng.gen_range(1..4);
        let mut inputs = vec![rand_t(&mut rng, &[m, d])];
        for _ in 0..4 {
            inputs.push(rand_t(&mut rng, &[d, d]));
            inputs.push(rand_t(&mut rng, &[d]));
        }
        let f = move |g: &mut Graph<f64>, v: &[Var]| {
            let p = AttentionParams {
                wq: v[1],
                bq: v[2],
                wk: v[3],
                bk: v[4],
                wv: v[5],
                bv: v[6],
                wo: v[7],
                bo: v[8],
            };
            multihead_self_attention(g, v[0], &p, heads)
        };
        errs.push(check_gradients(&inputs, &f, &mut rng)?);
    }
    record("multihead_self_attention", errs);

    let mut errs = Vec::new();
    for _ in 0..instances {
        let n = rng.gen_range(3..12);
        let est = rand_t(&mut rng, &[1, n]);
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = move |g: &mut Graph<f64>, v: &[Var]| g.neg_si_sdr(v[0], &target);
        errs.push(check_gradients(&[est], &f, &mut rng)?);
    }
    record("neg_si_sdr", errs);

    let mut errs = Vec::new();
    for _ in 0..instances {
        let k = rng.gen_range(1..5);
        let xs: Vec<Tensor<f64>> = (0..k).map(|_| rand_t(&mut rng, &[1])).collect();
        let f = |g: &mut Graph<f64>, v: &[Var]| g.mean(v);
        errs.push(check_gradients(&xs, &f, &mut rng)?);
    }
    record("mean", errs);

    let mut errs = Vec::new();
    for _ in 0..instances {
        let plan = Arc::new(StftPlan::new(8, 4)?);
        let frames = rng.gen_range(1..5);
        let nb = plan.n_bins();
        let len = (frames - 1) * 4 + 8 - rng.gen_range(0..3);
        let phase: Vec<Complex64> = (0..nb * frames)
            .map(|_| Complex64::from_polar(1.0, rng.gen_range(-3.1..3.1)))
            .collect();
        let phase = Arc::new(phase);
        let x = rand_t(&mut rng, &[nb, frames]);
        let f = move |g: &mut Graph<f64>, v: &[Var]| {
            g.istft_magnitude(v[0], Arc::clone(&plan), Arc::clone(&phase), len)
        };
        errs.push(check_gradients(&[x], &f, &mut rng)?);
    }
    record("istft_magnitude", errs);

    Ok(out)
}
