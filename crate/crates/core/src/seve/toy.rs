//! A one-dimensional ill-posed inverse problem with a known posterior.
//!
//! The generator maps `(x, z)` with `z ~ N(0,1)` to a prediction. Training on
//! the per-sample squared error against posterior draws minimizes SE and VE
//! together, which collapses the prediction spread. Training on the squared
//! distance between the batch-mean prediction and the exact posterior mean
//! (the bias operator, available in closed form here) targets SE only.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub means: Vec<f64>,
    pub weights: Vec<f64>,
    pub std: f64,
}

impl Mixture {
    pub fn new(means: Vec<f64>, weights: Vec<f64>, std: f64) -> Result<Self> {
        if means.is_empty() || means.len() != weights.len() {
            return Err(Error::Distribution("mixture needs one weight per mean".into()));
        }
        if !(std >= 0.0) || means.iter().chain(&weights).any(|v| !v.is_finite()) {
            return Err(Error::Distribution("mixture parameters must be finite, std >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Distribution(format!("mixture weights sum to {total}")));
        }
        Ok(Self { means, weights, std })
    }

    /// Equal-weight modes at `±1`.
    pub fn bimodal(std: f64) -> Self {
        Self::new(vec![-1.0, 1.0], vec![0.5, 0.5], std).expect("valid")
    }

    pub fn mean(&self) -> f64 {
        self.means.iter().zip(&self.weights).map(|(m, w)| m * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.means
            .iter()
            .zip(&self.weights)
            .map(|(m, w)| w * ((m - mu) * (m - mu) + self.std * self.std))
            .sum()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.means.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let n: f64 = StandardNormal.sample(rng);
        self.means[k] + self.std * n
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyInverseProblem {
    /// Observed input.
    pub x: f64,
    pub posterior: Mixture,
    pub hidden: usize,
}

impl ToyInverseProblem {
    pub fn bimodal() -> Self {
        Self {
            x: 0.5,
            posterior: Mixture::bimodal(0.1),
            hidden: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyLossMode {
    /// Per-sample squared error against posterior draws.
    Pixel,
    /// `(mean(ŷ) - E[y|x])²` with the exact posterior mean.
    AesopAnalytic,
}

impl ToyLossMode {
    pub fn name(self) -> &'static str {
        match self {
            ToyLossMode::Pixel => "pixel",
            ToyLossMode::AesopAnalytic => "aesop_analytic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Samples used to measure the output distribution.
    pub eval_samples: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 1024,
            lr: 0.01,
            seed: 0,
            eval_samples: 4096,
        }
    }
}

/// Two-layer perceptron `(x, z) -> tanh(W1 [x z] + b1) · w2 + b2`.
#[derive(Clone, Debug)]
struct ToyGenerator {
    w1: Vec<[f64; 2]>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

#[derive(Default)]
struct Grads {
    w1: Vec<[f64; 2]>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl ToyGenerator {
    fn init(hidden: usize, rng: &mut impl Rng) -> Self {
        let mut n = || -> f64 { StandardNormal.sample(rng) };
        let w1 = (0..hidden).map(|_| [n(), n()]).collect();
        let b1 = (0..hidden).map(|_| 0.1 * n()).collect();
        let scale = 1.0 / (hidden as f64).sqrt();
        let w2 = (0..hidden).map(|_| scale * n()).collect();
        Self { w1, b1, w2, b2: 0.0 }
    }

    fn forward_one(&self, x: f64, z: f64, hidden: &mut [f64]) -> f64 {
        let mut out = self.b2;
        for k in 0..self.b1.len() {
            let h = (self.w1[k][0] * x + self.w1[k][1] * z + self.b1[k]).tanh();
            hidden[k] = h;
            out += self.w2[k] * h;
        }
        out
    }

    fn forward(&self, x: f64, zs: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.b1.len()];
        zs.iter().map(|&z| self.forward_one(x, z, &mut h)).collect()
    }

    /// Backpropagates `dL/dŷ_i` for every batch element.
    fn backward(&self, x: f64, zs: &[f64], dout: &[f64]) -> Grads {
        let k = self.b1.len();
        let mut g = Grads {
            w1: vec![[0.0; 2]; k],
            b1: vec![0.0; k],
            w2: vec![0.0; k],
            b2: 0.0,
        };
        let mut h = vec![0.0; k];
        for (&z, &d) in zs.iter().zip(dout) {
            self.forward_one(x, z, &mut h);
            g.b2 += d;
            for j in 0..k {
                g.w2[j] += d * h[j];
                let dpre = d * self.w2[j] * (1.0 - h[j] * h[j]);
                g.b1[j] += dpre;
                g.w1[j][0] += dpre * x;
                g.w1[j][1] += dpre * z;
            }
        }
        g
    }

    fn sgd(&mut self, g: &Grads, lr: f64) {
        for j in 0..self.b1.len() {
            self.w1[j][0] -= lr * g.w1[j][0];
            self.w1[j][1] -= lr * g.w1[j][1];
            self.b1[j] -= lr * g.b1[j];
            self.w2[j] -= lr * g.w2[j];
        }
        self.b2 -= lr * g.b2;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyRow {
    pub step: usize,
    /// `|E[ŷ] - E[y|x]|`
    pub mean_error: f64,
    pub std: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ToyReport {
    pub mode: ToyLossMode,
    pub posterior_mean: f64,
    pub posterior_std: f64,
    pub initial_std: f64,
    pub initial_mean_error: f64,
    pub rows: Vec<ToyRow>,
    /// Step at which a non-finite loss stopped training.
    pub aborted_at: Option<usize>,
}

impl ToyReport {
    pub fn final_row(&self) -> Option<&ToyRow> {
        self.rows.last()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "step,mean_error,std,loss")?;
        for r in &self.rows {
            writeln!(w, "{},{:e},{:e},{:e}", r.step, r.mean_error, r.std, r.loss)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let last = self.final_row();
        format!(
            "mode={} steps={} mean_error={:.6} std={:.6} initial_std={:.6} aborted={}",
            self.mode.name(),
            last.map_or(0, |r| r.step),
            last.map_or(f64::NAN, |r| r.mean_error),
            last.map_or(f64::NAN, |r| r.std),
            self.initial_std,
            self.aborted_at.map_or("no".to_string(), |s| format!("step {s}")),
        )
    }
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains the toy generator and records `(mean error, std, loss)` per step.
///
/// Rows hold the output distribution measured on a fixed set of evaluation
/// noise draws after each update; row 0 is the initialization.
pub fn run_toy_experiment(
    problem: &ToyInverseProblem,
    mode: ToyLossMode,
    cfg: &ToyConfig,
) -> Result<ToyReport> {
    if cfg.batch == 0 || cfg.eval_samples < 2 || problem.hidden == 0 {
        return Err(Error::InvalidArgument("batch, eval samples and width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen = ToyGenerator::init(problem.hidden, &mut rng);
    let eval_z: Vec<f64> = (0..cfg.eval_samples).map(|_| StandardNormal.sample(&mut rng)).collect();
    let target_mean = problem.posterior.mean();

    let measure = |g: &ToyGenerator| {
        let (m, s) = moments(&g.forward(problem.x, &eval_z));
        ((m - target_mean).abs(), s)
    };
    let (initial_mean_error, initial_std) = measure(&gen);
    let mut rows = vec![ToyRow {
        step: 0,
        mean_error: initial_mean_error,
        std: initial_std,
        loss: f64::NAN,
    }];
    let mut aborted_at = None;
    let b = cfg.batch as f64;

    for step in 1..=cfg.steps {
        let zs: Vec<f64> = (0..cfg.batch).map(|_| StandardNormal.sample(&mut rng)).collect();
        let pred = gen.forward(problem.x, &zs);
        let (loss, dout): (f64, Vec<f64>) = match mode {
            ToyLossMode::Pixel => {
                let ys: Vec<f64> = (0..cfg.batch).map(|_| problem.posterior.sample(&mut rng)).collect();
                let loss = pred.iter().zip(&ys).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / b;
                let d = pred.iter().zip(&ys).map(|(p, y)| 2.0 * (p - y) / b).collect();
                (loss, d)
            }
            ToyLossMode::AesopAnalytic => {
                let m = pred.iter().sum::<f64>() / b;
                let diff = m - target_mean;
                (diff * diff, vec![2.0 * diff / b; cfg.batch])
            }
        };
        if !loss.is_finite() {
            aborted_at = Some(step);
            break;
        }
        let g = gen.backward(problem.x, &zs, &dout);
        gen.sgd(&g, cfg.lr);
        let (mean_error, std) = measure(&gen);
        rows.push(ToyRow {
            step,
            mean_error,
            std,
            loss,
        });
    }

    Ok(ToyReport {
        mode,
        posterior_mean: target_mean,
        posterior_std: problem.posterior.variance().sqrt(),
        initial_std,
        initial_mean_error,
        rows,
        aborted_at,
    })
}
