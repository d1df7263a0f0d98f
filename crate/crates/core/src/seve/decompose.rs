//! Systematic-effect / variance-effect decomposition of an expected loss.
//!
//! With `μ = argmin_m E[L(·, m)]` (the bias point) of each marginal:
//!
//! ```text
//! SE = E_y[L(y, μ_ŷ) - L(y, μ_y)]
//! VE = E_{y,ŷ}[L(y, ŷ) - L(y, μ_ŷ)]
//! E[L(y, ŷ)] = SE + VE + E_y[L(y, μ_y)]
//! ```
//!
//! For L2, `SE = |μ_ŷ - μ_y|²` and `VE = E|ŷ - μ_ŷ|² - 2 Σ_d Cov(y_d, ŷ_d)`;
//! the covariance vanishes when the prediction is drawn independently of the
//! target, leaving `VE = E|ŷ - μ_ŷ|²`.

use serde::Serialize;

use super::distribution::{DiscreteJointDistribution, Marginal, PointLoss};
use crate::error::{Error, Result};

const TIE_TOL: f64 = 1e-12;
const CLOSED_FORM_TOL: f64 = 1e-9;

/// Exact minimizer of `E[L(v, μ)]`: the mean for L2, the coordinatewise
/// weighted median for L1. When the L1 minimum is flat on an interval the
/// midpoint is returned.
pub fn bias_point(dist: &Marginal, loss: PointLoss) -> Vec<f64> {
    match loss {
        PointLoss::L2 => (0..dist.dim())
            .map(|d| dist.iter().map(|(p, w)| w * p[d]).sum())
            .collect(),
        PointLoss::L1 => (0..dist.dim()).map(|d| weighted_median(dist, d)).collect(),
    }
}

fn weighted_median(dist: &Marginal, d: usize) -> f64 {
    let mut vals: Vec<(f64, f64)> = dist.iter().map(|(p, w)| (p[d], w)).collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    // merge duplicates so ties in value do not look like flat intervals
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(vals.len());
    for (v, w) in vals {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => merged.push((v, w)),
        }
    }
    let total: f64 = merged.iter().map(|m| m.1).sum();
    let mut cum = 0.0;
    for (k, &(v, w)) in merged.iter().enumerate() {
        cum += w;
        if cum >= 0.5 * total - TIE_TOL {
            if (cum - 0.5 * total).abs() <= TIE_TOL && k + 1 < merged.len() {
                return 0.5 * (v + merged[k + 1].0);
            }
            return v;
        }
    }
    merged.last().map(|m| m.0).unwrap_or(0.0)
}

/// Bias point by bisection on the (sub)gradient of the expected loss, one
/// coordinate at a time. Works for any sampled marginal; the flat-interval
/// tie-break matches [`bias_point`] because the bracket collapses onto the
/// interval midpoint.
pub fn bias_point_bisection(dist: &Marginal, loss: PointLoss, tol: f64) -> Vec<f64> {
    (0..dist.dim())
        .map(|d| {
            let lo0 = dist.points().iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
            let hi0 = dist.points().iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
            let slope = |m: f64| -> (f64, f64) {
                // (left derivative, right derivative) of E[L] at m
                dist.iter().fold((0.0, 0.0), |(l, r), (p, w)| {
                    let diff = m - p[d];
                    match loss {
                        PointLoss::L2 => (l + 2.0 * w * diff, r + 2.0 * w * diff),
                        PointLoss::L1 => {
                            let sl = if diff > 0.0 { 1.0 } else { -1.0 };
                            let sr = if diff >= 0.0 { 1.0 } else { -1.0 };
                            (l + w * sl, r + w * sr)
                        }
                    }
                })
            };
            // Minimizers form [lo, hi]: lo is where the right slope turns
            // non-negative, hi where the left slope turns positive.
            let boundary = |past: &dyn Fn(f64) -> bool| {
                let (mut a, mut b) = (lo0, hi0);
                while b - a > tol {
                    let m = 0.5 * (a + b);
                    if past(m) {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                0.5 * (a + b)
            };
            let lo = boundary(&|m| slope(m).1 >= -TIE_TOL);
            let hi = boundary(&|m| slope(m).0 > TIE_TOL);
            0.5 * (lo + hi)
        })
        .collect()
}

/// L2-only closed forms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClosedForms {
    /// `|μ_ŷ - μ_y|²`
    pub se: f64,
    /// `E|ŷ - μ_ŷ|²`
    pub prediction_variance: f64,
    /// `Σ_d Cov(y_d, ŷ_d)`; zero for independent joints.
    pub cross_covariance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasOperatorResult {
    pub mu_y: Vec<f64>,
    pub mu_yhat: Vec<f64>,
    pub se: f64,
    pub ve: f64,
    /// `E[L(y, ŷ)]`
    pub expected_loss: f64,
    /// `E[L(y, μ_y)]`, the part no predictor can remove.
    pub irreducible: f64,
    pub closed: Option<ClosedForms>,
}

/// Exact enumeration of SE and VE. For L2 the closed forms are evaluated as
/// well and any disagreement beyond `1e-9` is an error.
pub fn decompose_se_ve(dist: &DiscreteJointDistribution, loss: PointLoss) -> Result<BiasOperatorResult> {
    let my = dist.marginal_y();
    let mh = dist.marginal_yhat();
    let mu_y = bias_point(&my, loss);
    let mu_yhat = bias_point(&mh, loss);

    let se: f64 = my
        .iter()
        .map(|(y, w)| w * (loss.eval(y, &mu_yhat) - loss.eval(y, &mu_y)))
        .sum();
    let ve: f64 = dist
        .cells()
        .map(|(y, h, p)| p * (loss.eval(y, h) - loss.eval(y, &mu_yhat)))
        .sum();
    let expected_loss: f64 = dist.cells().map(|(y, h, p)| p * loss.eval(y, h)).sum();
    let irreducible = my.expected_loss(loss, &mu_y);

    let closed = match loss {
        PointLoss::L1 => None,
        PointLoss::L2 => {
            let se_c = PointLoss::L2.eval(&mu_yhat, &mu_y);
            let var_h = mh.expected_loss(PointLoss::L2, &mu_yhat);
            let cov: f64 = dist
                .cells()
                .map(|(y, h, p)| {
                    p * (0..y.len())
                        .map(|d| (y[d] - mu_y[d]) * (h[d] - mu_yhat[d]))
                        .sum::<f64>()
                })
                .sum();
            check_close("SE", se, se_c)?;
            check_close("VE", ve, var_h - 2.0 * cov)?;
            Some(ClosedForms {
                se: se_c,
                prediction_variance: var_h,
                cross_covariance: cov,
            })
        }
    };

    Ok(BiasOperatorResult {
        mu_y,
        mu_yhat,
        se,
        ve,
        expected_loss,
        irreducible,
        closed,
    })
}

fn check_close(what: &'static str, enumerated: f64, closed: f64) -> Result<()> {
    if (enumerated - closed).abs() > CLOSED_FORM_TOL * enumerated.abs().max(1.0) {
        return Err(Error::ClosedFormMismatch {
            what,
            enumerated,
            closed,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(points: &[f64], weights: &[f64]) -> Marginal {
        Marginal::new(points.iter().map(|&p| vec![p]).collect(), weights.to_vec()).unwrap()
    }

    /// Dense 1-D grid argmin of the expected loss, returning the set of
    /// (near-)minimizers so flat minima are visible.
    fn grid_minimizers(m: &Marginal, loss: PointLoss, lo: f64, hi: f64, n: usize) -> (f64, f64) {
        let vals: Vec<(f64, f64)> = (0..=n)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / n as f64;
                (x, m.expected_loss(loss, &[x]))
            })
            .collect();
        let best = vals.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        let arg: Vec<f64> = vals.iter().filter(|v| v.1 <= best + 1e-12).map(|v| v.0).collect();
        (arg[0], *arg.last().unwrap())
    }

    #[test]
    fn uniform_pair_l2_is_mean() {
        assert_eq!(bias_point(&scalar(&[0.0, 1.0], &[0.5, 0.5]), PointLoss::L2), vec![0.5]);
    }

    #[test]
    fn uniform_pair_l1_flat_minimum_midpoint() {
        let m = scalar(&[0.0, 1.0], &[0.5, 0.5]);
        assert_eq!(bias_point(&m, PointLoss::L1), vec![0.5]);
        let (lo, hi) = grid_minimizers(&m, PointLoss::L1, -1.0, 2.0, 3000);
        assert!(lo.abs() < 1e-9 && (hi - 1.0).abs() < 1e-9, "flat on [0,1]: {lo} {hi}");
    }

    #[test]
    fn l1_is_median() {
        let m = scalar(&[0.0, 0.0, 3.0], &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(bias_point(&m, PointLoss::L1), vec![0.0]);
    }

    #[test]
    fn bisection_agrees_with_exact() {
        let cases = [
            (vec![0.0, 1.0], vec![0.5, 0.5]),
            (vec![0.0, 0.0, 3.0], vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
            (vec![-2.0, 0.5, 4.0, 7.0], vec![0.1, 0.2, 0.3, 0.4]),
        ];
        for (p, w) in cases {
            let m = scalar(&p, &w);
            for loss in [PointLoss::L1, PointLoss::L2] {
                let e = bias_point(&m, loss)[0];
                let b = bias_point_bisection(&m, loss, 1e-12)[0];
                assert!((e - b).abs() < 1e-9, "{loss:?} {p:?}: {e} vs {b}");
            }
        }
    }

    fn joint(py: &[f64], ph: &[f64]) -> DiscreteJointDistribution {
        let u = |pts: &[f64]| scalar(pts, &vec![1.0 / pts.len() as f64; pts.len()]);
        DiscreteJointDistribution::independent(&u(py), &u(ph)).unwrap()
    }

    #[test]
    fn deterministic_prediction_at_mean() {
        let r = decompose_se_ve(&joint(&[0.0, 1.0], &[0.5]), PointLoss::L2).unwrap();
        assert!(r.se.abs() < 1e-15 && r.ve.abs() < 1e-15);
    }

    #[test]
    fn deterministic_prediction_off_mean() {
        let r = decompose_se_ve(&joint(&[0.0, 1.0], &[1.0]), PointLoss::L2).unwrap();
        assert!((r.se - 0.25).abs() < 1e-15);
        assert!(r.ve.abs() < 1e-15);
    }

    #[test]
    fn independent_coin_prediction() {
        let r = decompose_se_ve(&joint(&[0.0, 1.0], &[0.0, 1.0]), PointLoss::L2).unwrap();
        assert!(r.se.abs() < 1e-15);
        assert!((r.ve - 0.25).abs() < 1e-15);
        assert!((r.expected_loss - (r.se + r.ve + r.irreducible)).abs() < 1e-15);
    }

    #[test]
    fn correlated_joint_carries_covariance() {
        // ŷ = y exactly: zero loss, VE = Var(ŷ) - 2 Cov = -Var(y).
        let d = DiscreteJointDistribution::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.5, 0.0], vec![0.0, 0.5]],
        )
        .unwrap();
        let r = decompose_se_ve(&d, PointLoss::L2).unwrap();
        let c = r.closed.unwrap();
        assert!((c.cross_covariance - 0.25).abs() < 1e-15);
        assert!((r.ve + 0.25).abs() < 1e-15);
        assert!(r.expected_loss.abs() < 1e-15);
    }

    #[test]
    fn l1_decomposition_telescopes() {
        let r = decompose_se_ve(&joint(&[0.0, 0.0, 3.0], &[1.0, 2.0]), PointLoss::L1).unwrap();
        assert!(r.closed.is_none());
        assert!((r.expected_loss - (r.se + r.ve + r.irreducible)).abs() < 1e-12);
        assert!(r.se >= -1e-15);
    }

    fn arb_marginal(dim: usize) -> impl Strategy<Value = Marginal> {
        (1usize..=6).prop_flat_map(move |n| {
            (
                prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), n),
                prop::collection::vec(0.01f64..1.0, n),
            )
                .prop_map(|(pts, w)| {
                    let s: f64 = w.iter().sum();
                    let mut w: Vec<f64> = w.iter().map(|x| x / s).collect();
                    let tail: f64 = w[1..].iter().sum();
                    w[0] = 1.0 - tail;
                    Marginal::new(pts, w).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn se_invariant_to_spread_preserving_bias(
            y in arb_marginal(2),
            h in arb_marginal(2),
            spread in 0.0f64..3.0,
        ) {
            // Mirror ŷ about its mean and scale the spread: the mean is unchanged.
            let mu = bias_point(&h, PointLoss::L2);
            let pts: Vec<Vec<f64>> = h.points().iter().flat_map(|p| {
                let d: Vec<f64> = (0..2).map(|k| p[k] - mu[k]).collect();
                [
                    (0..2).map(|k| mu[k] + spread * d[k]).collect::<Vec<_>>(),
                    (0..2).map(|k| mu[k] - spread * d[k]).collect::<Vec<_>>(),
                ]
            }).collect();
            let w: Vec<f64> = h.weights().iter().flat_map(|&w| [w / 2.0, w / 2.0]).collect();
            let h2 = Marginal::new(pts, w).unwrap();
            let a = decompose_se_ve(&DiscreteJointDistribution::independent(&y, &h).unwrap(), PointLoss::L2).unwrap();
            let b = decompose_se_ve(&DiscreteJointDistribution::independent(&y, &h2).unwrap(), PointLoss::L2).unwrap();
            prop_assert!((a.se - b.se).abs() < 1e-9);
        }

        #[test]
        fn ve_invariant_to_translation(
            y in arb_marginal(3),
            h in arb_marginal(3),
            t in prop::collection::vec(-2.0f64..2.0, 3),
        ) {
            let moved: Vec<Vec<f64>> = h.points().iter()
                .map(|p| p.iter().zip(&t).map(|(a, b)| a + b).collect())
                .collect();
            let h2 = Marginal::new(moved, h.weights().to_vec()).unwrap();
            let a = decompose_se_ve(&DiscreteJointDistribution::independent(&y, &h).unwrap(), PointLoss::L2).unwrap();
            let b = decompose_se_ve(&DiscreteJointDistribution::independent(&y, &h2).unwrap(), PointLoss::L2).unwrap();
            prop_assert!((a.ve - b.ve).abs() < 1e-9);
        }

        #[test]
        fn zero_se_when_biases_match(y in arb_marginal(1), spread in 0.0f64..5.0) {
            let mu = bias_point(&y, PointLoss::L2)[0];
            let h = Marginal::new(vec![vec![mu - spread], vec![mu + spread]], vec![0.5, 0.5]).unwrap();
            let r = decompose_se_ve(&DiscreteJointDistribution::independent(&y, &h).unwrap(), PointLoss::L2).unwrap();
            prop_assert!(r.se.abs() < 1e-9);
        }
    }
}
