use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-12;

/// Symmetric per-coordinate loss, summed over vector coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointLoss {
    L1,
    L2,
}

impl PointLoss {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let it = a.iter().zip(b);
        match self {
            PointLoss::L1 => it.map(|(x, y)| (x - y).abs()).sum(),
            PointLoss::L2 => it.map(|(x, y)| (x - y) * (x - y)).sum(),
        }
    }
}

/// A finitely supported distribution over real vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl Marginal {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Distribution("empty support".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::Distribution(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::Distribution("points must share a positive dimension".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Distribution("non-finite support point".into()));
        }
        check_probs(&weights)?;
        Ok(Self { points, weights })
    }

    /// Equal-weight empirical distribution of samples.
    pub fn from_samples(samples: Vec<Vec<f64>>) -> Result<Self> {
        let n = samples.len().max(1);
        Self::new(samples, vec![1.0 / n as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.iter().map(Vec::as_slice).zip(self.weights.iter().copied())
    }

    pub fn expected_loss(&self, loss: PointLoss, at: &[f64]) -> f64 {
        self.iter().map(|(p, w)| w * loss.eval(p, at)).sum()
    }
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Distribution("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Distribution(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Joint law of target `y` and prediction `ŷ` over finite supports.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJointDistribution {
    support_y: Vec<Vec<f64>>,
    support_yhat: Vec<Vec<f64>>,
    /// `probs[i][j] = p(y_i, ŷ_j)`
    probs: Vec<Vec<f64>>,
}

impl DiscreteJointDistribution {
    pub fn new(
        support_y: Vec<Vec<f64>>,
        support_yhat: Vec<Vec<f64>>,
        probs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if support_y.is_empty() || support_yhat.is_empty() {
            return Err(Error::Distribution("empty support".into()));
        }
        let dim = support_y[0].len();
        if dim == 0
            || support_y.iter().chain(&support_yhat).any(|p| p.len() != dim)
        {
            return Err(Error::Distribution("y and ŷ must share one positive dimension".into()));
        }
        if probs.len() != support_y.len() || probs.iter().any(|r| r.len() != support_yhat.len()) {
            return Err(Error::Distribution("probability table does not match supports".into()));
        }
        check_probs(&probs.iter().flatten().copied().collect::<Vec<_>>())?;
        Ok(Self {
            support_y,
            support_yhat,
            probs,
        })
    }

    /// Product distribution `p(y) p(ŷ)`: prediction independent of the target.
    pub fn independent(y: &Marginal, yhat: &Marginal) -> Result<Self> {
        let probs = y
            .weights()
            .iter()
            .map(|wy| yhat.weights().iter().map(|wh| wy * wh).collect())
            .collect();
        Self::new(y.points().to_vec(), yhat.points().to_vec(), probs)
    }

    /// Random joint with supports of `1..=max_support` points in `1..=max_dim`
    /// dimensions, coordinates in `[-2, 2)` and strictly positive cell masses.
    pub fn random(rng: &mut impl Rng, max_support: usize, max_dim: usize) -> Result<Self> {
        if max_support == 0 || max_dim == 0 {
            return Err(Error::Distribution("support and dimension bounds must be positive".into()));
        }
        let dim = rng.random_range(1..=max_dim);
        let ny = rng.random_range(1..=max_support);
        let nh = rng.random_range(1..=max_support);
        let mut points = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect()
        };
        let (support_y, support_yhat) = (points(ny), points(nh));
        let raw: Vec<Vec<f64>> = (0..ny)
            .map(|_| (0..nh).map(|_| rng.random_range(0.05..1.0)).collect())
            .collect();
        let total: f64 = raw.iter().flatten().sum();
        let probs = raw
            .into_iter()
            .map(|r| r.into_iter().map(|p| p / total).collect())
            .collect();
        Self::new(support_y, support_yhat, probs)
    }

    pub fn dim(&self) -> usize {
        self.support_y[0].len()
    }

    pub fn support_y(&self) -> &[Vec<f64>] {
        &self.support_y
    }

    pub fn support_yhat(&self) -> &[Vec<f64>] {
        &self.support_yhat
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.probs[i][j]
    }

    pub fn marginal_y(&self) -> Marginal {
        let w = self.probs.iter().map(|r| r.iter().sum()).collect();
        Marginal {
            points: self.support_y.clone(),
            weights: w,
        }
    }

    pub fn marginal_yhat(&self) -> Marginal {
        let w = (0..self.support_yhat.len())
            .map(|j| self.probs.iter().map(|r| r[j]).sum())
            .collect();
        Marginal {
            points: self.support_yhat.clone(),
            weights: w,
        }
    }

    /// Joint cells `(y_i, ŷ_j, p_ij)`.
    pub fn cells(&self) -> impl Iterator<Item = (&[f64], &[f64], f64)> {
        self.probs.iter().enumerate().flat_map(move |(i, row)| {
            row.iter().enumerate().map(move |(j, &p)| {
                (self.support_y[i].as_slice(), self.support_yhat[j].as_slice(), p)
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unnormalized_rejected() {
        let r = DiscreteJointDistribution::new(
            vec![vec![0.0]],
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.5, 0.49]],
        );
        assert!(matches!(r, Err(Error::Distribution(_))));
    }

    #[test]
    fn empty_support_rejected() {
        assert!(Marginal::new(vec![], vec![]).is_err());
        assert!(DiscreteJointDistribution::new(vec![], vec![vec![0.0]], vec![]).is_err());
    }

    #[test]
    fn marginals_of_product() {
        let y = Marginal::new(vec![vec![0.0], vec![1.0]], vec![0.25, 0.75]).unwrap();
        let h = Marginal::new(vec![vec![2.0], vec![3.0], vec![4.0]], vec![0.2, 0.3, 0.5]).unwrap();
        let j = DiscreteJointDistribution::independent(&y, &h).unwrap();
        for (a, b) in j.marginal_y().weights().iter().zip(y.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in j.marginal_yhat().weights().iter().zip(h.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn random_joints_respect_bounds() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let j = DiscreteJointDistribution::random(&mut rng, 4, 2).unwrap();
            assert!((1..=2).contains(&j.dim()));
            assert!((1..=4).contains(&j.support_y().len()) && (1..=4).contains(&j.support_yhat().len()));
            assert!(j.cells().all(|(_, _, p)| p > 0.0));
        }
        assert!(DiscreteJointDistribution::random(&mut rng, 0, 2).is_err());
    }
}
