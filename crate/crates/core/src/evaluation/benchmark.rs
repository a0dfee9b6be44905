use serde::{Deserialize, Serialize};

use super::disturbance::MassLayout;
use super::experiment::ControllerSet;
use crate::conic::ToleranceConfig;
use crate::error::Result;
use crate::model::{build_block_lift, chain_sparsity, spring_mass_chain, ChainParams, CostWeights};
use crate::sls::{Controller, Restriction};
use crate::synthesis::{
    default_tolerances, pipeline, synthesize_h2, synthesize_hinf, Objective, OracleChoice, OracleObjective,
    PipelineConfig, SynthesisSpec,
};

pub const NAME_R_QI: &str = "K_R_QI";
pub const NAME_R_C: &str = "K_R_C";
pub const NAME_HINF: &str = "K_Hinf";
pub const NAME_H2: &str = "K_H2";

/// Synthesis settings shared by the four benchmark controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub oracle_objective: OracleObjective,
    pub restriction: Restriction,
    pub tolerances: ToleranceConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            oracle_objective: OracleObjective::Hinf,
            restriction: Restriction::None,
            tolerances: default_tolerances(),
        }
    }
}

/// The benchmark controllers on a spring-mass chain, all over the chain
/// pattern: regret against the nearest-QI oracle, regret against the
/// centralized oracle, H∞ and H2.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub set: ControllerSet,
    pub controllers: Vec<Controller>,
    /// `λ*` of the two regret controllers, in set order.
    pub lambda_star: [f64; 2],
}

pub fn chain_benchmark(params: &ChainParams, cfg: &BenchmarkConfig) -> Result<Benchmark> {
    let sys = spring_mass_chain(params)?;
    let lift = build_block_lift(&sys)?;
    let cost = CostWeights::identity(lift.stacked_rows());
    let s = chain_sparsity(params.masses, params.horizon)?;
    let run = |oracle| {
        pipeline(
            &s,
            &lift,
            &cost,
            &PipelineConfig {
                oracle,
                oracle_objective: cfg.oracle_objective,
                restriction: cfg.restriction,
                tolerances: cfg.tolerances,
            },
        )
    };
    let r_qi = run(OracleChoice::NearestQi)?;
    let r_c = run(OracleChoice::Centralized)?;
    let spec = |objective| -> Result<SynthesisSpec> {
        Ok(SynthesisSpec::new(lift.clone(), cost.clone(), s.clone(), objective)?
            .with_restriction(cfg.restriction)
            .with_tolerances(cfg.tolerances))
    };
    let hinf = synthesize_hinf(&spec(Objective::Hinf)?)?;
    let h2 = synthesize_h2(&spec(Objective::H2 { sigma: None })?)?;
    let set = ControllerSet::new(
        [NAME_R_QI, NAME_R_C, NAME_HINF, NAME_H2].iter().map(|n| n.to_string()).collect(),
        vec![r_qi.phi.clone(), r_c.phi.clone(), hinf.phi.clone(), h2.phi.clone()],
        cost,
        MassLayout::new(params.masses, params.horizon),
    )?;
    Ok(Benchmark {
        set,
        controllers: vec![r_qi.controller, r_c.controller, hinf.controller, h2.controller],
        lambda_star: [r_qi.report.lambda_star, r_c.report.lambda_star],
    })
}
