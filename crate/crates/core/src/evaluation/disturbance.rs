use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::matrix;

/// Distribution of the affected coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DisturbanceKind {
    /// i.i.d. `U[lo, hi]`; `lo = hi` gives the constant `lo`.
    UniformInterval { lo: f64, hi: f64 },
    /// `δ = F g` with `g ~ N(0, I)` over the full vector; `None` means
    /// `F = I`. The mass law is ignored.
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_rows")]
        factor: Option<DMatrix<f64>>,
    },
    /// Uniform on the unit sphere of the full vector; the mass law is
    /// ignored.
    UnitSphere,
}

mod opt_rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(matrix::to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?
            .map(|r| matrix::from_rows(&r).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Which masses a draw perturbs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MassLaw {
    Fixed { masses: Vec<usize> },
    /// Count uniform on `1..=max`, subset uniform without replacement.
    UniformCount { max: usize },
}

/// Time steps carrying disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extent {
    /// Initial state and every process-noise step.
    #[default]
    FullHorizon,
    InitialState,
}

/// Per-mass coordinates carrying disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    #[default]
    FullState,
    Positions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceModel {
    pub kind: DisturbanceKind,
    pub law: MassLaw,
    #[serde(default)]
    pub extent: Extent,
    #[serde(default)]
    pub coordinates: Coordinates,
    pub seed: u64,
}

impl DisturbanceModel {
    pub fn validate(&self, layout: &MassLayout) -> Result<()> {
        if let DisturbanceKind::UniformInterval { lo, hi } = self.kind {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::validation(format!("invalid interval [{lo}, {hi}]")));
            }
        }
        if let DisturbanceKind::Gaussian { factor: Some(f) } = &self.kind {
            check_shape("Gaussian factor", (layout.len(), layout.len()), f.shape())?;
        }
        match &self.law {
            MassLaw::Fixed { masses } => {
                if let Some(&bad) = masses.iter().find(|&&i| i >= layout.masses) {
                    return Err(Error::validation(format!(
                        "mass index {bad} out of range for {} masses",
                        layout.masses
                    )));
                }
                let mut sorted = masses.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != masses.len() {
                    return Err(Error::validation("affected masses must be distinct"));
                }
            }
            MassLaw::UniformCount { max } => {
                if *max == 0 || *max > layout.masses {
                    return Err(Error::validation(format!(
                        "affected-mass maximum {max} must lie in 1..={}",
                        layout.masses
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Position of each mass's coordinates inside `δ = [x₀; w₀; …; w_{T−2}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MassLayout {
    pub masses: usize,
    pub horizon: usize,
}

impl MassLayout {
    pub fn new(masses: usize, horizon: usize) -> Self {
        MassLayout { masses, horizon }
    }

    pub fn state_dim(&self) -> usize {
        2 * self.masses
    }

    pub fn len(&self) -> usize {
        self.state_dim() * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Indices of mass `i`'s coordinates in `δ`.
    pub fn coordinates(&self, i: usize, extent: Extent, coords: Coordinates) -> Vec<usize> {
        let steps = match extent {
            Extent::FullHorizon => self.horizon,
            Extent::InitialState => 1.min(self.horizon),
        };
        let per: &[usize] = match coords {
            Coordinates::FullState => &[0, 1],
            Coordinates::Positions => &[0],
        };
        (0..steps)
            .flat_map(|t| per.iter().map(move |&o| t * self.state_dim() + 2 * i + o))
            .collect()
    }
}

/// Splits a 64-bit value into a well-mixed stream id.
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent generator for `(seed, sweep, iteration, draw)`, so results
/// do not depend on evaluation order.
pub fn derive_rng(seed: u64, sweep: u64, iteration: u64, draw: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix(splitmix(splitmix(sweep) ^ iteration) ^ draw));
    rng
}

/// Draws one stacked disturbance.
pub fn sample_disturbance<R: Rng + ?Sized>(
    model: &DisturbanceModel,
    layout: &MassLayout,
    rng: &mut R,
) -> Result<DVector<f64>> {
    model.validate(layout)?;
    let len = layout.len();
    match &model.kind {
        DisturbanceKind::Gaussian { factor } => {
            let g = DVector::from_fn(len, |_, _| StandardNormal.sample(rng));
            return Ok(match factor {
                Some(f) => f * g,
                None => g,
            });
        }
        DisturbanceKind::UnitSphere => {
            let g: DVector<f64> = DVector::from_fn(len, |_, _| StandardNormal.sample(rng));
            let norm = g.norm();
            return Ok(if norm > 0.0 { g / norm } else { g });
        }
        DisturbanceKind::UniformInterval { .. } => {}
    }
    let DisturbanceKind::UniformInterval { lo, hi } = model.kind else {
        unreachable!()
    };
    let affected: Vec<usize> = match &model.law {
        MassLaw::Fixed { masses } => masses.clone(),
        MassLaw::UniformCount { max } => {
            let count = rng.random_range(1..=*max);
            let mut picked = index::sample(rng, layout.masses, count).into_vec();
            picked.sort_unstable();
            picked
        }
    };
    let mut delta = DVector::zeros(len);
    let uniform = (lo < hi).then(|| Uniform::new(lo, hi).expect("lo < hi"));
    for i in affected {
        for k in layout.coordinates(i, model.extent, model.coordinates) {
            delta[k] = match &uniform {
                Some(u) => u.sample(rng),
                None => lo,
            };
        }
    }
    Ok(delta)
}
