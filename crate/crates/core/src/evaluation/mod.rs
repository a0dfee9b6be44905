//! Cost and regret evaluation, disturbance sampling and the Monte-Carlo
//! win-rate experiments.

mod benchmark;
mod disturbance;
mod experiment;
pub mod plot;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_shape, Result};
use crate::matrix;
use crate::model::CostWeights;
use crate::sls::ClosedLoopMap;

pub use benchmark::{chain_benchmark, Benchmark, BenchmarkConfig, NAME_H2, NAME_HINF, NAME_R_C, NAME_R_QI};
pub use disturbance::{
    derive_rng, sample_disturbance, Coordinates, DisturbanceKind, DisturbanceModel, Extent, MassLaw,
    MassLayout,
};
pub use experiment::{
    run_mass_count_experiment, run_win_experiment, ControllerSet, ControllerStats, ExperimentConfig,
    ExperimentReport, SweepPoint, TIE_TOL,
};

/// `J(δ, K) = δᵀΦᵀCΦδ`.
pub fn cost_j(delta: &DVector<f64>, phi: &ClosedLoopMap, cost: &CostWeights) -> Result<f64> {
    check_shape("δ", (phi.phi_x.ncols(), 1), delta.shape())?;
    let rows = phi.phi_x.nrows() + phi.phi_u.nrows();
    check_shape("C", (rows, rows), cost.c.shape())?;
    Ok((&cost.c_half * (phi.stacked() * delta)).norm_squared())
}

/// `e(δ, K, K̂) = J(δ, K) − J(δ, K̂)`.
pub fn error_e(
    delta: &DVector<f64>,
    phi: &ClosedLoopMap,
    phi_hat: &ClosedLoopMap,
    cost: &CostWeights,
) -> Result<f64> {
    Ok(cost_j(delta, phi, cost)? - cost_j(delta, phi_hat, cost)?)
}

/// Worst-case regret over the unit ball with its maximizing disturbance.
#[derive(Debug, Clone)]
pub struct RegretValue {
    pub value: f64,
    pub witness: DVector<f64>,
}

/// `Π(Φ) = ΦᵀCΦ − Φ̂ᵀCΦ̂`, symmetrized.
pub fn regret_matrix(phi: &ClosedLoopMap, phi_hat: &ClosedLoopMap, cost: &CostWeights) -> Result<DMatrix<f64>> {
    check_shape("Φ̂_x", phi.phi_x.shape(), phi_hat.phi_x.shape())?;
    check_shape("Φ̂_u", phi.phi_u.shape(), phi_hat.phi_u.shape())?;
    let m = &cost.c_half * phi.stacked();
    let mh = &cost.c_half * phi_hat.stacked();
    Ok(matrix::symmetrize(&(m.tr_mul(&m) - mh.tr_mul(&mh))))
}

/// `λ_max(Π(Φ))` and a unit eigenvector attaining it.
pub fn spregret_value(phi: &ClosedLoopMap, phi_hat: &ClosedLoopMap, cost: &CostWeights) -> Result<RegretValue> {
    let (value, witness) = matrix::lambda_max(&regret_matrix(phi, phi_hat, cost)?);
    Ok(RegretValue { value, witness })
}

/// Worst-case regret over unit disturbances in the range of `basis`
/// (orthonormal columns), e.g. initial-state-only disturbances.
pub fn spregret_value_on(
    phi: &ClosedLoopMap,
    phi_hat: &ClosedLoopMap,
    cost: &CostWeights,
    basis: &DMatrix<f64>,
) -> Result<RegretValue> {
    check_shape("basis", (phi.phi_x.ncols(), basis.ncols()), basis.shape())?;
    let pi = regret_matrix(phi, phi_hat, cost)?;
    let (value, v) = matrix::lambda_max(&matrix::symmetrize(&(basis.transpose() * pi * basis)));
    Ok(RegretValue { value, witness: basis * v })
}

/// Orthonormal basis of the coordinates `Extent::InitialState` perturbs.
pub fn initial_state_basis(state_dim: usize, horizon: usize) -> DMatrix<f64> {
    DMatrix::from_fn(state_dim * horizon, state_dim, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// `‖C^{1/2}Φ‖_F²`, the expected cost under `δ ~ N(0, I)`.
pub fn frobenius_cost(phi: &ClosedLoopMap, cost: &CostWeights) -> f64 {
    (&cost.c_half * phi.stacked()).norm_squared()
}

/// `‖C^{1/2}Φ‖²_{2→2}`, the worst cost over the unit ball.
pub fn spectral_cost(phi: &ClosedLoopMap, cost: &CostWeights) -> f64 {
    crate::synthesis::worst_case_value(phi, cost)
}
