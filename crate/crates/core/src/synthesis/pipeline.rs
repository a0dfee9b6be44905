use serde::{Deserialize, Serialize};

use super::{
    default_tolerances, synthesize_oracle, synthesize_spregret, Objective, Oracle, OracleObjective,
    Synthesized, SynthesisSpec,
};
use crate::conic::{SolveStats, ToleranceConfig};
use crate::error::{Error, Result};
use crate::model::{BlockLift, CostWeights};
use crate::sls::{causal_pattern, ClosedLoopMap, Controller, Restriction};
use crate::sparsity::{self, SparsityPattern};

/// How the oracle pattern `Ŝ ⊇ S` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleChoice {
    /// Boolean closure of `S` under `S ← S ∨ SΔS`.
    #[default]
    NearestQi,
    /// Every causal entry.
    Centralized,
}

impl std::str::FromStr for OracleChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest-qi" => Ok(OracleChoice::NearestQi),
            "centralized" => Ok(OracleChoice::Centralized),
            other => Err(Error::validation(format!("unknown oracle choice '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub oracle: OracleChoice,
    pub oracle_objective: OracleObjective,
    pub restriction: Restriction,
    pub tolerances: ToleranceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            oracle: OracleChoice::NearestQi,
            oracle_objective: OracleObjective::Hinf,
            restriction: Restriction::None,
            tolerances: default_tolerances(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub s: SparsityPattern,
    pub s_hat: SparsityPattern,
    pub vx: SparsityPattern,
    pub vx_hat: SparsityPattern,
    pub card_s: usize,
    pub card_s_hat: usize,
    /// `card(Ŝ) − card(S)`, the distance between controller and oracle.
    pub card_gap: usize,
    pub s_is_qi: bool,
    /// Whether the search set `Θ` may be a strict subset of `Sparse(S)`.
    pub theta_is_restriction: bool,
    pub oracle_cost: f64,
    pub lambda_star: f64,
    pub num_variables: usize,
    pub free_variables: usize,
    pub oracle_stats: SolveStats,
    pub spregret_stats: SolveStats,
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub controller: Controller,
    pub phi: ClosedLoopMap,
    pub oracle: Oracle,
    pub regret: Synthesized,
    pub report: PipelineReport,
}

/// Chooses `Ŝ`, synthesizes the oracle over it and then the regret-optimal
/// controller over `S`.
pub fn pipeline(
    s: &SparsityPattern,
    lift: &BlockLift,
    cost: &CostWeights,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    let causal = causal_pattern(lift);
    if s.shape() != causal.shape() || !s.is_subset_of(&causal) {
        return Err(Error::validation("S must be an mT × nT lower block-triangular pattern").at_stage("input"));
    }
    let s_hat = match config.oracle {
        OracleChoice::NearestQi => sparsity::nearest_qi_superset(s, &lift.delta).map_err(|e| e.at_stage("oracle pattern"))?,
        OracleChoice::Centralized => causal,
    };
    let s_is_qi = sparsity::is_qi(s, &lift.delta)?;
    let oracle = synthesize_oracle(
        lift,
        cost,
        &s_hat,
        config.oracle_objective,
        config.restriction,
        config.tolerances,
    )
    .map_err(|e| e.at_stage("oracle synthesis"))?;
    let spec = SynthesisSpec::new(
        lift.clone(),
        cost.clone(),
        s.clone(),
        Objective::SpRegret {
            oracle: oracle.result.phi.clone(),
            expect_nonnegative: true,
        },
    )?
    .with_restriction(config.restriction)
    .with_tolerances(config.tolerances);
    let regret = synthesize_spregret(&spec).map_err(|e| e.at_stage("regret synthesis"))?;
    let report = PipelineReport {
        config: *config,
        s: s.clone(),
        s_hat: s_hat.clone(),
        vx: spec.vx.clone(),
        vx_hat: oracle.vx.clone(),
        card_s: s.card(),
        card_s_hat: s_hat.card(),
        card_gap: s_hat.card() - s.card(),
        s_is_qi,
        theta_is_restriction: !s_is_qi,
        oracle_cost: oracle.result.value,
        lambda_star: regret.value,
        num_variables: regret.num_variables,
        free_variables: regret.free_variables,
        oracle_stats: oracle.result.stats.clone(),
        spregret_stats: regret.stats.clone(),
    };
    Ok(PipelineOutput {
        controller: regret.controller.clone(),
        phi: regret.phi.clone(),
        oracle,
        regret,
        report,
    })
}
