//! Central finite-difference gradient checking in `f64`.
//!
//! The numeric side only evaluates forward values, so it is independent of the
//! backward rules it verifies.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Perturbation half-width.
    pub eps: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
    /// At most this many coordinates are probed per tensor (chosen at random).
    pub max_coords: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            floor: 1e-6,
            max_coords: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub coords: usize,
}

impl GradCheckReport {
    fn record(&mut self, analytic: f64, numeric: f64, floor: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(floor);
        self.max_abs_err = self.max_abs_err.max(abs);
        self.max_rel_err = self.max_rel_err.max(rel);
        self.coords += 1;
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.coords += other.coords;
    }
}

fn coords(len: usize, max: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if len > max {
        rng.shuffle(&mut idx);
        idx.truncate(max);
    }
    idx
}

impl GradCheck {
    /// Checks `d f / d inputs` where `f` builds a scalar from leaf vars.
    pub fn inputs<F>(&self, inputs: &[Tensor<f64>], rng: &mut Rng, f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_grad())).collect();
        let loss = f(&mut g, &vars)?;
        let grads = g.backward(loss)?;
        let eval = |ts: &[Tensor<f64>]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
            let l = f(&mut g, &vars)?;
            g.item(l)
        };
        let mut report = GradCheckReport::default();
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (i, &v) in vars.iter().enumerate() {
            let zeros = vec![0.0; inputs[i].numel()];
            let analytic = grads.leaf(v).unwrap_or(&zeros).to_vec();
            for j in coords(inputs[i].numel(), self.max_coords, rng) {
                let orig = work[i].data()[j];
                work[i].data_mut()[j] = orig + self.eps;
                let plus = eval(&work)?;
                work[i].data_mut()[j] = orig - self.eps;
                let minus = eval(&work)?;
                work[i].data_mut()[j] = orig;
                report.record(analytic[j], (plus - minus) / (2.0 * self.eps), self.floor);
            }
        }
        Ok(report)
    }

    /// Checks `d f / d params` for every parameter of `store`.
    pub fn params<F>(&self, store: &ParamStore<f64>, rng: &mut Rng, f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
    {
        let mut g = Graph::new();
        let loss = f(&mut g, store)?;
        let grads = g.backward(loss)?;
        let mut work = store.clone();
        let mut report = GradCheckReport::default();
        for id in store.ids() {
            let zeros = vec![0.0; store.get(id).numel()];
            let analytic = grads.param(id).unwrap_or(&zeros).to_vec();
            for j in coords(store.get(id).numel(), self.max_coords, rng) {
                let orig = work.get(id).data()[j];
                let mut eval = |val: f64| -> Result<f64> {
                    work.get_mut(id).data_mut()[j] = val;
                    let mut g = Graph::new();
                    let l = f(&mut g, &work)?;
                    g.item(l)
                };
                let plus = eval(orig + self.eps)?;
                let minus = eval(orig - self.eps)?;
                work.get_mut(id).data_mut()[j] = orig;
                report.record(analytic[j], (plus - minus) / (2.0 * self.eps), self.floor);
            }
        }
        Ok(report)
    }
}

/// Random tensor with entries uniform in `[-scale, scale]`.
pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| (rng.uniform() * 2.0 - 1.0) * scale)
}

/// Fixed random projection `sum_i r_i * y_i`, turning any output into a scalar
/// whose gradient exercises every output coordinate.
pub fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = Rng::new(seed).split(0x5052_4f4a);
    let r = random_tensor(g.shape(y), 1.0, &mut rng);
    let rv = g.constant(r);
    let shape = g.shape(y).to_vec();
    let n = shape.iter().product::<usize>();
    // <r, y> computed as mean((y + r)^2 - y^2 - r^2) * n / 2 would be lossy; use
    // a 1-row linear map instead.
    let yf = g.reshape(y, &[1, n])?;
    let rf = g.reshape(rv, &[1, n])?;
    let dot = g.linear(yf, rf, None)?;
    g.reshape(dot, &[])
}

/// Outcome of checking one kernel across several seeds.
#[derive(Clone, Debug)]
pub struct KernelCheck {
    pub kernel: &'static str,
    pub seeds: u64,
    pub report: GradCheckReport,
}

type Case = fn(&mut Rng) -> Result<GradCheckReport>;

fn check_conv(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = random_tensor(&[2, 4, 8, 8], 1.0, rng);
    let w = random_tensor(&[3, 4, 3, 3], 0.5, rng);
    let b = random_tensor(&[3], 0.5, rng);
    let mode = if rng.bernoulli(0.5) {
        crate::PadMode::Reflect
    } else {
        crate::PadMode::Zero
    };
    let stride = 1 + rng.below(2);
    GradCheck::default().inputs(&[x, w, b], rng, |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), stride, 1, mode)?;
        project(g, y, 1)
    })
}

fn check_instance_norm(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = random_tensor(&[2, 3, 4, 5], 1.0, rng);
    GradCheck::default().inputs(&[x], rng, |g, v| {
        let y = g.instance_norm(v[0], 1e-5)?;
        project(g, y, 2)
    })
}

fn check_adain(rng: &mut Rng) -> Result<GradCheckReport> {
    let z = random_tensor(&[2, 3, 4, 4], 1.0, rng);
    let gamma = random_tensor(&[2, 3], 1.5, rng);
    let beta = random_tensor(&[2, 3], 1.0, rng);
    GradCheck::default().inputs(&[z, gamma, beta], rng, |g, v| {
        let y = g.adain(v[0], v[1], v[2], 1e-5)?;
        project(g, y, 3)
    })
}

fn check_upsample(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = random_tensor(&[1, 2, 3, 4], 1.0, rng);
    let factor = 1 + rng.below(3);
    GradCheck::default().inputs(&[x], rng, |g, v| {
        let y = g.upsample_nearest(v[0], factor)?;
        project(g, y, 4)
    })
}

fn check_linear(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = random_tensor(&[3, 5], 1.0, rng);
    let w = random_tensor(&[4, 5], 1.0, rng);
    let b = random_tensor(&[4], 1.0, rng);
    GradCheck::default().inputs(&[x, w, b], rng, |g, v| {
        let y = g.linear(v[0], v[1], Some(v[2]))?;
        let y = g.tanh(y);
        project(g, y, 5)
    })
}

fn check_pooling(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = random_tensor(&[2, 2, 6, 4], 1.0, rng);
    GradCheck::default().inputs(&[x], rng, |g, v| {
        let p = g.avg_pool(v[0], 2)?;
        let gp = g.global_avg_pool(p)?;
        let y = g.reshape(gp, &[2, 2])?;
        project(g, y, 6)
    })
}

/// Activations and the scalar losses. Inputs are drawn away from the
/// activation and |.| kinks so the central difference never straddles one.
fn check_losses(rng: &mut Rng) -> Result<GradCheckReport> {
    let away = |rng: &mut Rng, shape: &[usize]| {
        Tensor::from_fn(shape.to_vec(), |_| {
            let m = 0.05 + 0.95 * rng.uniform();
            if rng.bernoulli(0.5) {
                m
            } else {
                -m
            }
        })
    };
    let a = away(rng, &[2, 3, 2, 2]);
    let d = away(rng, &[2, 3, 2, 2]);
    let labels = [rng.below(4), rng.below(4)];
    GradCheck::default().inputs(&[a, d], rng, move |g, v| {
        // b = a - d keeps |a - b| = |d| away from zero.
        let b = g.weighted_sum(&[(v[0], 1.0), (v[1], -1.0)])?;
        let l1 = g.mean_abs_diff(v[0], b)?;
        let r = g.relu(v[0]);
        let lr = g.leaky_relu(v[1], 0.2);
        let l2 = g.mean_sq_diff(r, lr)?;
        let l3 = g.mse_target(v[0], 1.0)?;
        let l4 = g.bce_with_logits(v[1], 0.0)?;
        let flat = g.reshape(v[0], &[2, 12])?;
        let logits = g.slice_cols(flat, 2, 4)?;
        let l5 = g.cross_entropy(logits, &labels)?;
        let l6 = g.mean(lr)?;
        g.weighted_sum(&[(l1, 1.0), (l2, 0.7), (l3, 0.3), (l4, 1.1), (l5, 0.9), (l6, 0.5)])
    })
}

/// Conv -> IN -> ReLU -> FC composite, checked against parameters. IN outputs
/// are unit-scale, so at eps 1e-3 some ReLU inputs sit inside the stencil; this
/// case probes with eps 1e-6 (still well above f64 cancellation error).
fn check_composite(rng: &mut Rng) -> Result<GradCheckReport> {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("conv.w", "net", random_tensor(&[4, 3, 3, 3], 0.5, rng));
    let b = store.add("conv.b", "net", random_tensor(&[4], 0.5, rng));
    let fw = store.add("fc.w", "net", random_tensor(&[2, 4], 0.5, rng));
    let fb = store.add("fc.b", "net", random_tensor(&[2], 0.5, rng));
    let x = random_tensor(&[2, 3, 6, 6], 1.0, rng);
    GradCheck { eps: 1e-6, ..GradCheck::default() }.params(&store, rng, |g, s| {
        let xv = g.constant(x.clone());
        let (w, b, fw, fb) = (g.param(s, w), g.param(s, b), g.param(s, fw), g.param(s, fb));
        let h = g.conv2d(xv, w, Some(b), 1, 1, crate::PadMode::Reflect)?;
        let h = g.instance_norm(h, 1e-5)?;
        let h = g.relu(h);
        let h = g.global_avg_pool(h)?;
        let y = g.linear(h, fw, Some(fb))?;
        project(g, y, 7)
    })
}

const CASES: &[(&str, Case)] = &[
    ("conv2d", check_conv),
    ("instance_norm", check_instance_norm),
    ("adain", check_adain),
    ("upsample_nearest", check_upsample),
    ("fc", check_linear),
    ("pooling", check_pooling),
    ("activations_and_losses", check_losses),
    ("conv_in_relu_fc", check_composite),
];

/// Runs every kernel check for seeds `0..seeds`.
pub fn kernel_suite(seeds: u64) -> Result<Vec<KernelCheck>> {
    CASES
        .iter()
        .map(|&(kernel, case)| {
            let mut report = GradCheckReport::default();
            for seed in 0..seeds {
                let mut rng = Rng::new(seed).split(kernel.len() as u64);
                report.merge(&case(&mut rng)?);
            }
            Ok(KernelCheck {
                kernel,
                seeds,
                report,
            })
        })
        .collect()
}
