//! Bias/variance decomposition lab: exact SE/VE on finite joints and the toy
//! variance-collapse experiment.

mod decompose;
mod distribution;
mod toy;

pub use decompose::{bias_point, bias_point_bisection, decompose_se_ve, BiasOperatorResult, ClosedForms};
pub use distribution::{DiscreteJointDistribution, Marginal, PointLoss};
pub use toy::{
    run_toy_experiment, Mixture, ToyConfig, ToyInverseProblem, ToyLossMode, ToyReport, ToyRow,
};
