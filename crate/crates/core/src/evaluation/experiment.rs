use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::disturbance::{
    derive_rng, sample_disturbance, Coordinates, DisturbanceKind, DisturbanceModel, Extent, MassLaw, MassLayout,
};
use crate::error::{check_shape, Error, Result};
use crate::model::CostWeights;
use crate::sls::ClosedLoopMap;

/// Relative tolerance under which the two smallest costs count as a tie.
pub const TIE_TOL: f64 = 1e-9;

/// Controllers compared on a common plant, given by their closed-loop maps.
#[derive(Debug, Clone)]
pub struct ControllerSet {
    pub names: Vec<String>,
    pub maps: Vec<ClosedLoopMap>,
    pub cost: CostWeights,
    pub layout: MassLayout,
}

impl ControllerSet {
    pub fn new(names: Vec<String>, maps: Vec<ClosedLoopMap>, cost: CostWeights, layout: MassLayout) -> Result<Self> {
        if names.len() != maps.len() || names.len() < 2 {
            return Err(Error::validation("need at least two named controllers"));
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::validation("controller names must be unique"));
        }
        let nt = layout.len();
        for m in &maps {
            check_shape("controller Φ_x", (nt, nt), m.phi_x.shape())?;
            check_shape("controller Φ_u", (m.phi_u.nrows(), nt), m.phi_u.shape())?;
            check_shape("C", (nt + m.phi_u.nrows(), nt + m.phi_u.nrows()), cost.c.shape())?;
        }
        Ok(ControllerSet {
            names,
            maps,
            cost,
            layout,
        })
    }

    fn weighted(&self) -> Vec<DMatrix<f64>> {
        self.maps.iter().map(|m| &self.cost.c_half * m.stacked()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub draws: usize,
    pub iterations: usize,
    pub seed: u64,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub extent: Extent,
    #[serde(default)]
    pub coordinates: Coordinates,
    /// Controller against which relative cost increases are reported.
    #[serde(default)]
    pub baseline: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            draws: 1000,
            iterations: 100,
            seed: 0,
            lo: -0.5,
            hi: 1.0,
            extent: Extent::FullHorizon,
            coordinates: Coordinates::FullState,
            baseline: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 || self.iterations == 0 {
            return Err(Error::validation("draws and iterations must be positive"));
        }
        if !(self.lo <= self.hi && self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::validation(format!("invalid interval [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    fn model(&self, law: MassLaw) -> DisturbanceModel {
        DisturbanceModel {
            kind: DisturbanceKind::UniformInterval { lo: self.lo, hi: self.hi },
            law,
            extent: self.extent,
            coordinates: self.coordinates,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerStats {
    pub name: String,
    pub win_mean: f64,
    pub win_sd: f64,
    pub win_ci_lo: f64,
    pub win_ci_hi: f64,
    pub mean_cost: f64,
    /// `mean_cost / baseline_mean_cost − 1`.
    pub relative_increase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sweep_point: usize,
    pub masses: usize,
    pub draws_total: usize,
    pub ties: usize,
    pub controllers: Vec<ControllerStats>,
}

impl SweepPoint {
    pub fn stats(&self, name: &str) -> Option<&ControllerStats> {
        self.controllers.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// `affected-masses` or `mass-count`.
    pub mode: String,
    pub config: ExperimentConfig,
    pub controllers: Vec<String>,
    pub points: Vec<SweepPoint>,
    /// Caller-supplied configuration echo (plant, synthesis settings).
    #[serde(default)]
    pub echo: serde_json::Value,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sweep_point,controller,win_mean,win_ci_lo,win_ci_hi,mean_cost\n");
        for p in &self.points {
            for c in &p.controllers {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    p.sweep_point, c.name, c.win_mean, c.win_ci_lo, c.win_ci_hi, c.mean_cost
                ));
            }
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let x_label = match self.mode.as_str() {
            "mass-count" => "number of masses",
            _ => "maximum number of affected masses",
        };
        super::plot::win_chart(self, x_label)
    }
}

struct IterationTally {
    wins: Vec<usize>,
    cost_sums: Vec<f64>,
    ties: usize,
}

fn run_point(
    set: &ControllerSet,
    law: MassLaw,
    sweep_index: u64,
    sweep_point: usize,
    cfg: &ExperimentConfig,
) -> Result<SweepPoint> {
    let model = cfg.model(law);
    model.validate(&set.layout)?;
    let weighted = set.weighted();
    let k = weighted.len();
    let tallies: Vec<IterationTally> = (0..cfg.iterations)
        .into_par_iter()
        .map(|it| {
            let mut tally = IterationTally {
                wins: vec![0; k],
                cost_sums: vec![0.0; k],
                ties: 0,
            };
            let mut costs = vec![0.0; k];
            for draw in 0..cfg.draws {
                let mut rng = derive_rng(cfg.seed, sweep_index, it as u64, draw as u64);
                let delta: DVector<f64> =
                    sample_disturbance(&model, &set.layout, &mut rng).expect("model validated");
                for (c, m) in weighted.iter().enumerate() {
                    costs[c] = (m * &delta).norm_squared();
                    tally.cost_sums[c] += costs[c];
                }
                let best = (0..k).fold(0, |b, c| if costs[c] < costs[b] { c } else { b });
                let tied = (0..k).any(|c| c != best && costs[c] - costs[best] <= TIE_TOL * costs[best].abs());
                if tied {
                    tally.ties += 1;
                } else {
                    tally.wins[best] += 1;
                }
            }
            tally
        })
        .collect();

    let iters = cfg.iterations as f64;
    let total = (cfg.iterations * cfg.draws) as f64;
    let mut controllers = Vec::with_capacity(k);
    for c in 0..k {
        let fracs: Vec<f64> = tallies.iter().map(|t| t.wins[c] as f64 / cfg.draws as f64).collect();
        let mean = fracs.iter().sum::<f64>() / iters;
        let sd = if cfg.iterations > 1 {
            (fracs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (iters - 1.0)).sqrt()
        } else {
            0.0
        };
        let half = 1.96 * sd / iters.sqrt();
        controllers.push(ControllerStats {
            name: set.names[c].clone(),
            win_mean: mean,
            win_sd: sd,
            win_ci_lo: mean - half,
            win_ci_hi: mean + half,
            mean_cost: tallies.iter().map(|t| t.cost_sums[c]).sum::<f64>() / total,
            relative_increase: None,
        });
    }
    if let Some(base) = &cfg.baseline {
        let b = controllers
            .iter()
            .find(|c| &c.name == base)
            .ok_or_else(|| Error::validation(format!("unknown baseline controller '{base}'")))?
            .mean_cost;
        for c in controllers.iter_mut() {
            c.relative_increase = Some(c.mean_cost / b - 1.0);
        }
    }
    Ok(SweepPoint {
        sweep_point,
        masses: set.layout.masses,
        draws_total: cfg.iterations * cfg.draws,
        ties: tallies.iter().map(|t| t.ties).sum(),
        controllers,
    })
}

/// Win fractions as the maximum number of affected masses sweeps
/// `max_affected`; each draw perturbs a uniform number `1..=max` of masses.
pub fn run_win_experiment(set: &ControllerSet, max_affected: &[usize], cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let points = max_affected
        .iter()
        .enumerate()
        .map(|(i, &max)| run_point(set, MassLaw::UniformCount { max }, i as u64, max, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        mode: "affected-masses".into(),
        config: cfg.clone(),
        controllers: set.names.clone(),
        points,
        echo: serde_json::Value::Null,
    })
}

/// Win fractions as the chain length varies; `build` re-synthesizes the
/// controllers for each mass count.
pub fn run_mass_count_experiment<F>(counts: &[usize], build: F, cfg: &ExperimentConfig) -> Result<ExperimentReport>
where
    F: Fn(usize) -> Result<ControllerSet>,
{
    cfg.validate()?;
    let mut points = Vec::with_capacity(counts.len());
    let mut names: Option<Vec<String>> = None;
    for (i, &n) in counts.iter().enumerate() {
        let set = build(n)?;
        if set.layout.masses != n {
            return Err(Error::validation(format!(
                "controller set for {n} masses reports {} masses",
                set.layout.masses
            )));
        }
        match &names {
            Some(prev) if *prev != set.names => {
                return Err(Error::validation("controller names must match across sweep points"))
            }
            None => names = Some(set.names.clone()),
            _ => {}
        }
        points.push(run_point(&set, MassLaw::UniformCount { max: n }, i as u64, n, cfg)?);
    }
    Ok(ExperimentReport {
        mode: "mass-count".into(),
        config: cfg.clone(),
        controllers: names.unwrap_or_default(),
        points,
        echo: serde_json::Value::Null,
    })
}
