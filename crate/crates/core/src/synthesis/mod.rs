//! H2, H∞, oracle and spatial-regret synthesis over the closed-loop
//! parameterization, and the end-to-end regret pipeline.
//!
//! Every routine searches over `Ψ = Φ_uΓ` restricted to `Sparse(S)` (see
//! [`Parameterization`]) with `I + GΨ ∈ Sparse(V_x)` imposed as linear
//! equalities. The returned gain is rebuilt from the projected state
//! factor, so it lies in `Sparse(S)` exactly.

mod lmi;
mod pipeline;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{self, SdpProblem, SolveStats, ToleranceConfig, VarId};
use crate::error::{check_shape, Error, Result};
use crate::matrix;
use crate::model::{BlockLift, CostWeights};
use crate::sls::{ClosedLoopMap, Controller, Method, Parameterization, Provenance, Restriction};
use crate::sparsity::{self, Leakage, SparsityPattern};

pub use lmi::ClosedLoopLmi;
pub use pipeline::{pipeline, OracleChoice, PipelineConfig, PipelineOutput, PipelineReport};

/// Allowed gap between a solver value and the same quantity recomputed
/// from the returned map.
pub const TOL_POSTCHECK: f64 = 1e-6;

/// Tolerances used by the synthesis routines unless overridden.
pub fn default_tolerances() -> ToleranceConfig {
    ToleranceConfig::default()
}

#[derive(Debug, Clone)]
pub enum Objective {
    /// `‖C^{1/2}ΦΣ_δ‖_F²`; `None` means `Σ_δ = I`.
    H2 { sigma: Option<DMatrix<f64>> },
    /// `‖C^{1/2}Φ‖²_{2→2}`.
    Hinf,
    /// `λ_max(ΦᵀCΦ − Φ̂ᵀCΦ̂)` against a benchmark map.
    SpRegret {
        oracle: ClosedLoopMap,
        /// Treat `λ* < −TOL_POSTCHECK` as an invariant violation (set when
        /// the oracle is optimal over a QI superset of `S`).
        expect_nonnegative: bool,
    },
}

/// Which objective an oracle optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleObjective {
    H2,
    #[default]
    Hinf,
}

impl std::str::FromStr for OracleObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h2" => Ok(OracleObjective::H2),
            "hinf" => Ok(OracleObjective::Hinf),
            other => Err(Error::validation(format!("unknown oracle objective '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisSpec {
    pub lift: BlockLift,
    pub cost: CostWeights,
    pub s: SparsityPattern,
    pub vx: SparsityPattern,
    pub objective: Objective,
    pub restriction: Restriction,
    pub tolerances: ToleranceConfig,
}

impl SynthesisSpec {
    /// Spec with `V_x = generate_vx(S)`, no restriction and default tolerances.
    pub fn new(lift: BlockLift, cost: CostWeights, s: SparsityPattern, objective: Objective) -> Result<Self> {
        check_shape("S", (lift.mt(), lift.nt()), s.shape())?;
        check_shape("C", (lift.stacked_rows(), lift.stacked_rows()), cost.c.shape())?;
        if !s.is_subset_of(&crate::sls::causal_pattern(&lift)) {
            return Err(Error::validation("S must be lower block-triangular"));
        }
        let vx = sparsity::generate_vx(&s);
        Ok(SynthesisSpec {
            lift,
            cost,
            s,
            vx,
            objective,
            restriction: Restriction::None,
            tolerances: default_tolerances(),
        })
    }

    pub fn with_vx(mut self, vx: SparsityPattern) -> Result<Self> {
        check_shape("V_x", (self.lift.nt(), self.lift.nt()), vx.shape())?;
        self.vx = vx;
        Ok(self)
    }

    pub fn with_restriction(mut self, restriction: Restriction) -> Self {
        self.restriction = restriction;
        self
    }

    pub fn with_tolerances(mut self, tolerances: ToleranceConfig) -> Self {
        self.tolerances = tolerances;
        self
    }
}

/// Outcome of a synthesis call.
#[derive(Debug, Clone)]
pub struct Synthesized {
    pub controller: Controller,
    pub phi: ClosedLoopMap,
    /// H2 cost, `γ²`, or `λ*` depending on the objective.
    pub value: f64,
    pub stats: SolveStats,
    /// Decision variables of the conic program before equality elimination.
    pub num_variables: usize,
    /// Parameter count of the chosen restriction before sparsity is
    /// applied, plus the epigraph scalar when present (`mnT + 1` for the
    /// Toeplitz regret program).
    pub free_variables: usize,
}

struct Prepared {
    param: Parameterization,
    problem: SdpProblem,
    first: VarId,
}

fn prepare(spec: &SynthesisSpec) -> Result<Prepared> {
    if !spec.s.is_subset_of(&crate::sls::causal_pattern(&spec.lift)) {
        return Err(Error::validation("S must be lower block-triangular"));
    }
    let param = Parameterization::new(&spec.lift, &spec.s, spec.restriction)?;
    let mut problem = SdpProblem::new();
    let first = problem.add_variables("psi", param.len());
    for eq in param.state_equalities(&spec.lift, &spec.vx)? {
        let coeffs: Vec<(VarId, f64)> = eq.coeffs.iter().map(|&(v, c)| (VarId(first.0 + v), c)).collect();
        problem.add_equality(&coeffs, eq.rhs)?;
    }
    Ok(Prepared { param, problem, first })
}

fn free_count(spec: &SynthesisSpec, epigraph: bool) -> Result<usize> {
    let base = match spec.restriction {
        Restriction::None => crate::sls::causal_pattern(&spec.lift).card(),
        Restriction::Toeplitz => crate::sls::toeplitz_free_variables(&spec.lift)?,
    };
    Ok(base + usize::from(epigraph))
}

/// Rebuilds `K` and `Φ` from the solved parameters.
fn finish(
    spec: &SynthesisSpec,
    prep: &Prepared,
    y: &DVector<f64>,
    method: Method,
    stats: &SolveStats,
) -> Result<(Controller, ClosedLoopMap)> {
    let psi_y = y.rows(prep.first.0, prep.param.len()).into_owned();
    let (k, leak) = prep.param.controller_gain(&spec.lift, &psi_y, Some(&spec.vx))?;
    let phi = prep.param.closed_loop(&spec.lift, &psi_y, Some(&spec.vx));
    let scale = 1.0 + matrix::max_abs(&(&spec.lift.g * prep.param.psi(&psi_y)));
    if leak.exceeds(1e3 * spec.tolerances.tol_eq * scale) {
        return Err(Error::InvariantViolation(format!(
            "state factor leaves V_x by {:.3e} at {:?}",
            leak.max_abs, leak.position
        )));
    }
    let mut prov = Provenance::new(method);
    prov.solver = Some(stats.clone());
    if leak.max_abs > 0.0 {
        prov.projected_leakage = Some(leak.max_abs);
    }
    let controller = Controller::new(&spec.lift, k, spec.s.clone(), prov)?;
    Ok((controller, phi))
}

/// Minimizes `‖C^{1/2}ΦΣ_δ‖_F²`; returns the squared norm as the value.
pub fn synthesize_h2(spec: &SynthesisSpec) -> Result<Synthesized> {
    let Objective::H2 { sigma } = &spec.objective else {
        return Err(Error::validation("synthesize_h2 needs an H2 objective"));
    };
    let nt = spec.lift.nt();
    let sigma = sigma.clone().unwrap_or_else(|| DMatrix::identity(nt, nt));
    check_shape("Σ_δ", (nt, nt), sigma.shape())?;
    let mut prep = prepare(spec)?;
    let (l, m0) = lmi::weighted_factors(&spec.lift, &spec.cost);
    let r = &spec.lift.gamma_inv;
    let ss = &sigma * sigma.transpose();
    // ‖(M₀ + L J R)Σ‖² = const + 2 gᵀy + yᵀHy.
    let ll = l.tr_mul(&l);
    let rsr = r * &ss * r.transpose();
    let lm = l.tr_mul(&m0) * &ss * r.transpose();
    let entries = &prep.param.entries;
    let p = entries.len();
    let mut h = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let mut s = 0.0;
            for &(a, b) in &entries[i] {
                for &(c, d) in &entries[j] {
                    s += ll[(a, c)] * rsr[(d, b)];
                }
            }
            h[(i, j)] = s;
            h[(j, i)] = s;
        }
    }
    let linear: Vec<(VarId, f64)> = entries
        .iter()
        .enumerate()
        .map(|(i, idx)| (VarId(prep.first.0 + i), 2.0 * idx.iter().map(|&(a, b)| lm[(a, b)]).sum::<f64>()))
        .collect();
    let constant = (&m0 * &sigma).norm_squared();
    prep.problem.set_quadratic_objective(constant, &linear, h)?;
    let sol = conic::solve(&prep.problem, &spec.tolerances).require_optimal()?;
    let stats = sol.stats();
    let (controller, phi) = finish(spec, &prep, &sol.values, Method::H2, &stats)?;
    let value = h2_value(&phi, &spec.cost, &sigma);
    if (value - sol.objective).abs() > TOL_POSTCHECK * (1.0 + value.abs()) {
        return Err(Error::InvariantViolation(format!(
            "H2 cost of the returned map {value:.12e} differs from the solver objective {:.12e}",
            sol.objective
        )));
    }
    Ok(Synthesized {
        controller,
        phi,
        value,
        stats,
        num_variables: prep.problem.num_vars(),
        free_variables: free_count(spec, false)?,
    })
}

fn h2_value(phi: &ClosedLoopMap, cost: &CostWeights, sigma: &DMatrix<f64>) -> f64 {
    (&cost.c_half * phi.stacked() * sigma).norm_squared()
}

/// `λ_max(ΦᵀCΦ)`.
pub fn worst_case_value(phi: &ClosedLoopMap, cost: &CostWeights) -> f64 {
    let m = &cost.c_half * phi.stacked();
    matrix::lambda_max(&m.tr_mul(&m)).0
}

/// Minimizes `γ` subject to `[[γI, C^{1/2}Φ], [ΦᵀC^{1/2}, γI]] ⪰ 0`;
/// returns `γ²`, checked against `λ_max(ΦᵀCΦ)` of the returned map.
pub fn synthesize_hinf(spec: &SynthesisSpec) -> Result<Synthesized> {
    if !matches!(spec.objective, Objective::Hinf) {
        return Err(Error::validation("synthesize_hinf needs an H-infinity objective"));
    }
    let mut prep = prepare(spec)?;
    let gamma = prep.problem.add_variable("gamma");
    let block = ClosedLoopLmi::spectral(&spec.lift, &spec.cost, &prep.param);
    prep.problem.add_psd_block(Arc::new(block))?;
    prep.problem.set_objective(&[(gamma, 1.0)])?;
    let sol = conic::solve(&prep.problem, &spec.tolerances).require_optimal()?;
    let stats = sol.stats();
    let (controller, phi) = finish(spec, &prep, &sol.values, Method::Hinf, &stats)?;
    let gamma_sq = sol.value(gamma).powi(2);
    let check = worst_case_value(&phi, &spec.cost);
    if (gamma_sq - check).abs() > TOL_POSTCHECK * gamma_sq.abs().max(1e-12) {
        return Err(Error::InvariantViolation(format!(
            "γ² = {gamma_sq:.12e} but λ_max(ΦᵀCΦ) = {check:.12e}"
        )));
    }
    Ok(Synthesized {
        controller,
        phi,
        value: gamma_sq,
        stats,
        num_variables: prep.problem.num_vars(),
        free_variables: free_count(spec, true)?,
    })
}

/// Minimizes `λ` subject to `[[I, C^{1/2}Φ], [ΦᵀC^{1/2}, λI + Φ̂ᵀCΦ̂]] ⪰ 0`.
pub fn synthesize_spregret(spec: &SynthesisSpec) -> Result<Synthesized> {
    let Objective::SpRegret {
        oracle,
        expect_nonnegative,
    } = &spec.objective
    else {
        return Err(Error::validation("synthesize_spregret needs a regret objective"));
    };
    oracle.check_shape(&spec.lift)?;
    let mut prep = prepare(spec)?;
    let lambda = prep.problem.add_variable("lambda");
    let mh = &spec.cost.c_half * oracle.stacked();
    let block = ClosedLoopLmi::regret(&spec.lift, &spec.cost, &prep.param, mh.tr_mul(&mh));
    prep.problem.add_psd_block(Arc::new(block))?;
    prep.problem.set_objective(&[(lambda, 1.0)])?;
    let sol = conic::solve(&prep.problem, &spec.tolerances).require_optimal()?;
    let stats = sol.stats();
    let (controller, phi) = finish(spec, &prep, &sol.values, Method::SpRegret, &stats)?;
    let lambda_star = sol.value(lambda);
    let check = crate::evaluation::spregret_value(&phi, oracle, &spec.cost)?.value;
    if (lambda_star - check).abs() > TOL_POSTCHECK * (1.0 + lambda_star.abs()) {
        return Err(Error::InvariantViolation(format!(
            "λ* = {lambda_star:.12e} but λ_max(Π(Φ*)) = {check:.12e}"
        )));
    }
    if *expect_nonnegative && lambda_star < -TOL_POSTCHECK {
        return Err(Error::InvariantViolation(format!(
            "λ* = {lambda_star:.3e} is negative although the oracle is optimal over a QI superset"
        )));
    }
    Ok(Synthesized {
        controller,
        phi,
        value: lambda_star,
        stats,
        num_variables: prep.problem.num_vars(),
        free_variables: free_count(spec, true)?,
    })
}

/// Oracle map optimal over a QI pattern `Ŝ`.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub pattern: SparsityPattern,
    pub vx: SparsityPattern,
    pub objective: OracleObjective,
    pub result: Synthesized,
}

/// Synthesizes the oracle over `Ŝ`, refusing non-QI patterns.
pub fn synthesize_oracle(
    lift: &BlockLift,
    cost: &CostWeights,
    s_hat: &SparsityPattern,
    objective: OracleObjective,
    restriction: Restriction,
    tolerances: ToleranceConfig,
) -> Result<Oracle> {
    if let Some((row, col)) = sparsity::qi_violation(s_hat, &lift.delta)? {
        return Err(Error::NotQuadraticallyInvariant { row, col });
    }
    let obj = match objective {
        OracleObjective::H2 => Objective::H2 { sigma: None },
        OracleObjective::Hinf => Objective::Hinf,
    };
    let spec = SynthesisSpec::new(lift.clone(), cost.clone(), s_hat.clone(), obj)?
        .with_restriction(restriction)
        .with_tolerances(tolerances);
    let mut result = match objective {
        OracleObjective::H2 => synthesize_h2(&spec)?,
        OracleObjective::Hinf => synthesize_hinf(&spec)?,
    };
    result.controller.provenance.method = Method::Oracle;
    result.controller.provenance.oracle_pattern = Some(s_hat.clone());
    Ok(Oracle {
        pattern: s_hat.clone(),
        vx: spec.vx,
        objective,
        result,
    })
}

/// Dispatches on the spec's objective.
pub fn synthesize(spec: &SynthesisSpec) -> Result<Synthesized> {
    match spec.objective {
        Objective::H2 { .. } => synthesize_h2(spec),
        Objective::Hinf => synthesize_hinf(spec),
        Objective::SpRegret { .. } => synthesize_spregret(spec),
    }
}

/// Largest entry of `Φ_xΓ` outside `V_x`; zero for maps built here.
pub fn state_factor_leakage(phi: &ClosedLoopMap, lift: &BlockLift, vx: &SparsityPattern) -> Result<Leakage> {
    sparsity::leakage(&(&phi.phi_x * &lift.gamma), vx)
}
