//! Finite-horizon LTV plants, their lifted block operators, quadratic cost
//! weights and the spring-mass chain benchmark.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::matrix::{self, block_diag};
use crate::sparsity::{struct_of, BlockMeta, SparsityPattern};

/// How a continuous-time model was turned into the discrete plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    /// Exact zero-order hold.
    Zoh,
    /// Forward Euler, `A_d = I + Ts·A`, `B_d = Ts·B`.
    Euler,
}

impl std::str::FromStr for Discretization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zoh" => Ok(Discretization::Zoh),
            "euler" => Ok(Discretization::Euler),
            other => Err(Error::validation(format!("unknown discretization '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discretization: Option<Discretization>,
    #[serde(rename = "Ts", default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    /// Chain parameters when the plant came from [`spring_mass_chain`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainParams>,
}

/// Plant `x_{t+1} = A_t x_t + B_t u_t + w_t` over `T` steps.
///
/// The disturbance input matrix is the identity; plants with another
/// disturbance gain are rejected on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystem")]
pub struct HorizonSystem {
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "n")]
    pub state_dim: usize,
    #[serde(rename = "m")]
    pub input_dim: usize,
    #[serde(rename = "A_seq", with = "matrix::rows_seq")]
    pub a_seq: Vec<DMatrix<f64>>,
    #[serde(rename = "B_seq", with = "matrix::rows_seq")]
    pub b_seq: Vec<DMatrix<f64>>,
    #[serde(default)]
    pub meta: ModelMeta,
}

#[derive(Deserialize)]
struct RawSystem {
    #[serde(rename = "T")]
    horizon: usize,
    #[serde(rename = "n")]
    state_dim: usize,
    #[serde(rename = "m")]
    input_dim: usize,
    #[serde(rename = "A_seq", with = "matrix::rows_seq")]
    a_seq: Vec<DMatrix<f64>>,
    #[serde(rename = "B_seq", with = "matrix::rows_seq")]
    b_seq: Vec<DMatrix<f64>>,
    #[serde(rename = "E_seq", default, with = "matrix::rows_seq")]
    e_seq: Vec<DMatrix<f64>>,
    #[serde(default)]
    meta: ModelMeta,
}

impl TryFrom<RawSystem> for HorizonSystem {
    type Error = Error;

    fn try_from(raw: RawSystem) -> Result<Self> {
        let mut sys = HorizonSystem::with_disturbance_gain(raw.a_seq, raw.b_seq, &raw.e_seq)?;
        if (sys.horizon, sys.state_dim, sys.input_dim)
            != (raw.horizon, raw.state_dim, raw.input_dim)
        {
            return Err(Error::validation(format!(
                "declared (T, n, m) = ({}, {}, {}) does not match the matrix sequences ({}, {}, {})",
                raw.horizon, raw.state_dim, raw.input_dim, sys.horizon, sys.state_dim, sys.input_dim
            )));
        }
        sys.meta = raw.meta;
        Ok(sys)
    }
}

impl HorizonSystem {
    pub fn new(a_seq: Vec<DMatrix<f64>>, b_seq: Vec<DMatrix<f64>>) -> Result<Self> {
        let horizon = a_seq.len();
        if horizon == 0 {
            return Err(Error::validation("horizon must be positive"));
        }
        if b_seq.len() != horizon {
            return Err(Error::validation(format!(
                "A_seq has {} matrices but B_seq has {}",
                horizon,
                b_seq.len()
            )));
        }
        let n = a_seq[0].nrows();
        let m = b_seq[0].ncols();
        if n == 0 || m == 0 {
            return Err(Error::validation("state and input dimensions must be positive"));
        }
        for (a, b) in a_seq.iter().zip(&b_seq) {
            check_shape("A_t", (n, n), a.shape())?;
            check_shape("B_t", (n, m), b.shape())?;
            if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::validation("non-finite plant entry"));
            }
        }
        Ok(HorizonSystem {
            horizon,
            state_dim: n,
            input_dim: m,
            a_seq,
            b_seq,
            meta: ModelMeta::default(),
        })
    }

    /// Like [`HorizonSystem::new`] but accepts an explicit disturbance gain
    /// sequence, which must be the identity (empty means identity).
    /// Non-identity gains need a disturbance-shaping reformulation that is
    /// outside this crate's scope.
    pub fn with_disturbance_gain(
        a_seq: Vec<DMatrix<f64>>,
        b_seq: Vec<DMatrix<f64>>,
        e_seq: &[DMatrix<f64>],
    ) -> Result<Self> {
        let sys = Self::new(a_seq, b_seq)?;
        let eye = DMatrix::<f64>::identity(sys.state_dim, sys.state_dim);
        if !e_seq.is_empty() && (e_seq.len() != sys.horizon || e_seq.iter().any(|e| *e != eye)) {
            return Err(Error::validation(
                "only identity disturbance gains (E_t = I) are supported; \
                 shape non-identity disturbances into the plant before lifting",
            ));
        }
        Ok(sys)
    }

    /// Time-invariant plant repeated over `horizon` steps.
    pub fn lti(a: DMatrix<f64>, b: DMatrix<f64>, horizon: usize) -> Result<Self> {
        Self::new(vec![a; horizon], vec![b; horizon])
    }

    /// True when `(A_t, B_t)` is constant over the steps that enter the
    /// lifted dynamics (`t = 0..T-2`).
    pub fn is_lti(&self) -> bool {
        let used = self.horizon.saturating_sub(1).max(1);
        self.a_seq[..used].iter().all(|a| *a == self.a_seq[0])
            && self.b_seq[..used].iter().all(|b| *b == self.b_seq[0])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Lifted operators of a [`HorizonSystem`]: `x = Z𝐀x + Z𝐁u + δ`.
#[derive(Debug, Clone)]
pub struct BlockLift {
    pub state_dim: usize,
    pub input_dim: usize,
    pub horizon: usize,
    /// Block-downshift operator, `nT × nT`.
    pub z: DMatrix<f64>,
    /// `blkdiag(A_0, …, A_{T-2}, 0)`.
    pub a: DMatrix<f64>,
    /// `blkdiag(B_0, …, B_{T-2}, 0)`.
    pub b: DMatrix<f64>,
    pub z_a: DMatrix<f64>,
    pub z_b: DMatrix<f64>,
    /// `Γ = I − Z𝐀`.
    pub gamma: DMatrix<f64>,
    pub gamma_inv: DMatrix<f64>,
    /// `G = Γ⁻¹Z𝐁`, `nT × mT`.
    pub g: DMatrix<f64>,
    /// `Struct(G)`.
    pub delta: SparsityPattern,
    /// Whether the plant is time invariant (required by the Toeplitz restriction).
    pub lti: bool,
}

impl BlockLift {
    pub fn new(sys: &HorizonSystem) -> Result<Self> {
        build_block_lift(sys)
    }

    /// Builds a lift directly from the products `Z𝐀` and `Z𝐁`.
    ///
    /// Used for abstract instances (for example a static interconnection
    /// with a prescribed `Struct(G)`) that do not come from a time-stepped
    /// plant. `Z` is stored as the identity so that `Z·𝐀 = z_a`.
    pub fn from_operators(
        state_dim: usize,
        input_dim: usize,
        horizon: usize,
        z_a: DMatrix<f64>,
        z_b: DMatrix<f64>,
    ) -> Result<Self> {
        let nt = state_dim * horizon;
        let mt = input_dim * horizon;
        check_shape("Z𝐀", (nt, nt), z_a.shape())?;
        check_shape("Z𝐁", (nt, mt), z_b.shape())?;
        let z = DMatrix::identity(nt, nt);
        Self::assemble(state_dim, input_dim, horizon, z, z_a.clone(), z_b.clone(), z_a, z_b, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        n: usize,
        m: usize,
        horizon: usize,
        z: DMatrix<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        z_a: DMatrix<f64>,
        z_b: DMatrix<f64>,
        lti: bool,
    ) -> Result<Self> {
        let nt = n * horizon;
        let gamma = DMatrix::identity(nt, nt) - &z_a;
        let gamma_inv = matrix::solve_lower(&gamma, &DMatrix::identity(nt, nt))?;
        let g = matrix::solve_lower(&gamma, &z_b)?;
        let mut delta = struct_of(&g);
        delta.block_meta = Some(BlockMeta {
            row_block: n,
            col_block: m,
            horizon,
        });
        Ok(BlockLift {
            state_dim: n,
            input_dim: m,
            horizon,
            z,
            a,
            b,
            z_a,
            z_b,
            gamma,
            gamma_inv,
            g,
            delta,
            lti,
        })
    }

    pub fn nt(&self) -> usize {
        self.state_dim * self.horizon
    }

    pub fn mt(&self) -> usize {
        self.input_dim * self.horizon
    }

    /// Rows of the stacked map `[Φ_x; Φ_u]`.
    pub fn stacked_rows(&self) -> usize {
        (self.state_dim + self.input_dim) * self.horizon
    }
}

/// Builds `Z`, `𝐀`, `𝐁`, `Γ`, `G` and `Δ = Struct(G)` for `sys`.
pub fn build_block_lift(sys: &HorizonSystem) -> Result<BlockLift> {
    let (n, m, horizon) = (sys.state_dim, sys.input_dim, sys.horizon);
    let nt = n * horizon;
    let mut z = DMatrix::zeros(nt, nt);
    for t in 1..horizon {
        z.view_mut((t * n, (t - 1) * n), (n, n))
            .fill_with_identity();
    }
    let mut a_blocks: Vec<DMatrix<f64>> = sys.a_seq[..horizon - 1].to_vec();
    a_blocks.push(DMatrix::zeros(n, n));
    let mut b_blocks: Vec<DMatrix<f64>> = sys.b_seq[..horizon - 1].to_vec();
    b_blocks.push(DMatrix::zeros(n, m));
    let a = block_diag(&a_blocks);
    let b = block_diag(&b_blocks);
    let z_a = &z * &a;
    let z_b = &z * &b;
    BlockLift::assemble(n, m, horizon, z, a, b, z_a, z_b, sys.is_lti())
}

/// Weight matrix of `J = [x; u]ᵀ C [x; u]` with a cached square root.
#[derive(Debug, Clone)]
pub struct CostWeights {
    pub c: DMatrix<f64>,
    /// Symmetric square root, `C_halfᵀ·C_half = C`.
    pub c_half: DMatrix<f64>,
}

impl CostWeights {
    /// Default PSD tolerance: eigenvalues in `[-tol, 0)` are clipped to zero.
    pub const TOL_PSD: f64 = 1e-7;

    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(c, Self::TOL_PSD)
    }

    pub fn with_tolerance(c: DMatrix<f64>, tol_psd: f64) -> Result<Self> {
        if !c.is_square() {
            return Err(Error::validation("cost matrix must be square"));
        }
        let asym = matrix::max_abs(&(&c - c.transpose()));
        if asym > 1e-12 * (1.0 + matrix::max_abs(&c)) {
            return Err(Error::validation("cost matrix must be symmetric"));
        }
        let is_diagonal = (0..c.nrows())
            .all(|i| (0..c.ncols()).all(|j| i == j || c[(i, j)] == 0.0));
        if is_diagonal {
            let mut half = DMatrix::zeros(c.nrows(), c.ncols());
            for i in 0..c.nrows() {
                let v = c[(i, i)];
                if v < -tol_psd {
                    return Err(Error::validation(format!(
                        "cost matrix is not PSD (eigenvalue {v:.3e})"
                    )));
                }
                half[(i, i)] = v.max(0.0).sqrt();
            }
            return Ok(CostWeights { c, c_half: half });
        }
        let eig = SymmetricEigen::new(matrix::symmetrize(&c));
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -tol_psd {
            return Err(Error::validation(format!(
                "cost matrix is not PSD (eigenvalue {min:.3e})"
            )));
        }
        let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let v = &eig.eigenvectors;
        let c_half = v * DMatrix::from_diagonal(&sqrt_vals) * v.transpose();
        Ok(CostWeights { c, c_half })
    }

    /// `C = I` over the stacked `(n + m)T` signal.
    pub fn identity(dim: usize) -> Self {
        CostWeights {
            c: DMatrix::identity(dim, dim),
            c_half: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }
}

/// Parameters of the mass-spring-damper chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub masses: usize,
    /// Spring constant, kg/s².
    pub k: f64,
    /// Damping, kg/s.
    pub c: f64,
    /// Mass of every cart, kg.
    pub mass: f64,
    /// Sampling time, s.
    pub ts: f64,
    pub horizon: usize,
    pub discretization: Discretization,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            masses: 10,
            k: 0.5,
            c: 0.5,
            mass: 1.0,
            ts: 0.5,
            horizon: 30,
            discretization: Discretization::Zoh,
        }
    }
}

impl ChainParams {
    pub fn validate(&self) -> Result<()> {
        if self.masses < 2 {
            return Err(Error::validation("a chain needs at least two masses"));
        }
        if self.horizon == 0 {
            return Err(Error::validation("horizon must be positive"));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::validation("sampling time must be positive"));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::validation("mass must be positive"));
        }
        if !(self.k.is_finite() && self.c.is_finite()) {
            return Err(Error::validation("spring and damping constants must be finite"));
        }
        Ok(())
    }
}

/// Continuous-time chain matrices with state `[p¹, v¹, …, pᴺ, vᴺ]`.
///
/// Interior masses couple to both neighbours; the end masses have a single
/// neighbour, so their self-coupling is `−k/m`, `−c/m`.
pub fn chain_continuous(p: &ChainParams) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    p.validate()?;
    let nm = p.masses;
    let mut a = DMatrix::zeros(2 * nm, 2 * nm);
    let mut b = DMatrix::zeros(2 * nm, nm);
    let (ks, cs) = (p.k / p.mass, p.c / p.mass);
    for i in 0..nm {
        let (pi, vi) = (2 * i, 2 * i + 1);
        a[(pi, vi)] = 1.0;
        let neighbours: Vec<usize> = [i.checked_sub(1), (i + 1 < nm).then_some(i + 1)]
            .into_iter()
            .flatten()
            .collect();
        for &j in &neighbours {
            a[(vi, 2 * j)] += ks;
            a[(vi, 2 * j + 1)] += cs;
        }
        a[(vi, pi)] -= ks * neighbours.len() as f64;
        a[(vi, vi)] -= cs * neighbours.len() as f64;
        b[(vi, i)] = 1.0 / p.mass;
    }
    Ok((a, b))
}

/// Exact zero-order-hold discretization via the exponential of `[A B; 0 0]·Ts`.
pub fn discretize_zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (a.nrows(), b.ncols());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * ts));
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

pub fn discretize_euler(a: &DMatrix<f64>, b: &DMatrix<f64>, ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    (DMatrix::identity(n, n) + a * ts, b * ts)
}

/// Discretized spring-mass chain with `n = 2N` states and `m = N` inputs.
pub fn spring_mass_chain(p: &ChainParams) -> Result<HorizonSystem> {
    let (ac, bc) = chain_continuous(p)?;
    let (ad, bd) = match p.discretization {
        Discretization::Zoh => discretize_zoh(&ac, &bc, p.ts),
        Discretization::Euler => discretize_euler(&ac, &bc, p.ts),
    };
    let mut sys = HorizonSystem::lti(ad, bd, p.horizon)?;
    sys.meta = ModelMeta {
        discretization: Some(p.discretization),
        ts: Some(p.ts),
        chain: Some(p.clone()),
    };
    Ok(sys)
}

/// Spatial access pattern of the chain (`N × 2N`): controller `i` reads its
/// own position and velocity, the position of its right neighbour, and the
/// full state of the last mass.
pub fn chain_spatial_pattern(masses: usize) -> Result<SparsityPattern> {
    if masses < 2 {
        return Err(Error::validation("a chain needs at least two masses"));
    }
    let mut s = SparsityPattern::zeros(masses, 2 * masses);
    for i in 0..masses {
        s.set(i, 2 * i, true);
        s.set(i, 2 * i + 1, true);
        if i + 1 < masses {
            s.set(i, 2 * (i + 1), true);
        }
        s.set(i, 2 * (masses - 1), true);
        s.set(i, 2 * (masses - 1) + 1, true);
    }
    Ok(s)
}

/// `Tril(T) ⊗ S_spatial`, the causal chain information pattern (`NT × 2NT`).
pub fn chain_sparsity(masses: usize, horizon: usize) -> Result<SparsityPattern> {
    if horizon == 0 {
        return Err(Error::validation("horizon must be positive"));
    }
    let spatial = chain_spatial_pattern(masses)?;
    Ok(SparsityPattern::tril_kron(horizon, &spatial))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lift_scalar_two_steps() {
        let sys = HorizonSystem::lti(
            DMatrix::from_element(1, 1, 0.7),
            DMatrix::from_element(1, 1, 2.0),
            2,
        )
        .unwrap();
        let lift = build_block_lift(&sys).unwrap();
        assert_eq!(lift.z, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]));
        assert_eq!(lift.a, DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, 0.0]));
        assert_eq!(lift.g, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0]));
    }

    #[test]
    fn zero_dynamics_give_identity_gamma() {
        let sys = HorizonSystem::lti(DMatrix::zeros(2, 2), DMatrix::identity(2, 1), 3).unwrap();
        let lift = build_block_lift(&sys).unwrap();
        assert_eq!(lift.gamma, DMatrix::identity(6, 6));
        assert_eq!(lift.g, &lift.z * &lift.b);
    }

    #[test]
    fn last_block_is_zeroed_regardless_of_input() {
        let a_seq = vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 9.0)];
        let b_seq = vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 9.0)];
        let lift = build_block_lift(&HorizonSystem::new(a_seq, b_seq).unwrap()).unwrap();
        assert_eq!(lift.a[(1, 1)], 0.0);
        assert_eq!(lift.b[(1, 1)], 0.0);
    }

    #[test]
    fn rejects_mismatched_sequences() {
        let err = HorizonSystem::new(
            vec![DMatrix::zeros(2, 2), DMatrix::zeros(3, 3)],
            vec![DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        assert!(HorizonSystem::new(vec![DMatrix::zeros(1, 1)], vec![]).is_err());
    }

    #[test]
    fn rejects_non_identity_disturbance_gain() {
        let e = vec![DMatrix::from_element(1, 1, 2.0)];
        let err = HorizonSystem::with_disturbance_gain(
            vec![DMatrix::zeros(1, 1)],
            vec![DMatrix::zeros(1, 1)],
            &e,
        )
        .unwrap_err();
        assert!(err.to_string().contains("E_t = I"));
    }

    #[test]
    fn cost_weights_sqrt() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let w = CostWeights::new(c.clone()).unwrap();
        let recon = w.c_half.transpose() * &w.c_half;
        assert!((recon - c).abs().max() < 1e-12);
        assert!(CostWeights::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
    }

    #[test]
    fn chain_rejects_single_mass() {
        let p = ChainParams {
            masses: 1,
            ..ChainParams::default()
        };
        assert!(spring_mass_chain(&p).is_err());
        assert!(chain_sparsity(1, 3).is_err());
    }
}
