//! Closed-loop (system-level) parameterization.
//!
//! A causal controller `u = Kx` induces the maps `x = Φ_x δ`, `u = Φ_u δ`.
//! This module converts between controllers and closed-loop maps, assembles
//! the achievability and sparsity-invariance equalities over the entries of
//! `Φ`, and provides [`Parameterization`], the reduced affine description
//! of all maps satisfying achievability that the synthesis routines solve
//! over.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::SolveStats;
use crate::error::{check_shape, Error, Result};
use crate::matrix::{self, is_lower_block_triangular};
use crate::model::BlockLift;
use crate::sparsity::{self, BlockMeta, Leakage, SparsityPattern};

/// Default tolerance on the Frobenius achievability residual.
pub const TOL_ACH: f64 = 1e-8;
/// Default reconstruction tolerance for roundtrips.
pub const TOL_RECON: f64 = 1e-8;

/// Closed-loop maps from the stacked disturbance `δ = [x₀; w]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopMap {
    #[serde(rename = "Phi_x", with = "matrix::rows")]
    pub phi_x: DMatrix<f64>,
    #[serde(rename = "Phi_u", with = "matrix::rows")]
    pub phi_u: DMatrix<f64>,
}

impl ClosedLoopMap {
    /// `Φ = [Φ_x; Φ_u]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (nt, mt) = (self.phi_x.nrows(), self.phi_u.nrows());
        let mut out = DMatrix::zeros(nt + mt, self.phi_x.ncols());
        out.rows_mut(0, nt).copy_from(&self.phi_x);
        out.rows_mut(nt, mt).copy_from(&self.phi_u);
        out
    }

    /// `‖(I − Z𝐀)Φ_x − Z𝐁Φ_u − I‖_F`.
    pub fn achievability_residual(&self, lift: &BlockLift) -> f64 {
        let nt = lift.nt();
        (&lift.gamma * &self.phi_x - &lift.z_b * &self.phi_u - DMatrix::<f64>::identity(nt, nt))
            .norm()
    }

    pub fn check_shape(&self, lift: &BlockLift) -> Result<()> {
        check_shape("Φ_x", (lift.nt(), lift.nt()), self.phi_x.shape())?;
        check_shape("Φ_u", (lift.mt(), lift.nt()), self.phi_u.shape())
    }

    /// Verifies causality, identity diagonal blocks and achievability.
    pub fn validate(&self, lift: &BlockLift, tol_ach: f64) -> Result<()> {
        self.check_shape(lift)?;
        let (n, m) = (lift.state_dim, lift.input_dim);
        if !is_lower_block_triangular(&self.phi_x, n, n)
            || !is_lower_block_triangular(&self.phi_u, m, n)
        {
            return Err(Error::validation("closed-loop maps must be lower block-triangular"));
        }
        let residual = self.achievability_residual(lift);
        if !(residual <= tol_ach) {
            return Err(Error::NotAchievable {
                residual,
                tolerance: tol_ach,
            });
        }
        Ok(())
    }
}

/// How a controller was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    H2,
    Hinf,
    SpRegret,
    Oracle,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_pattern: Option<SparsityPattern>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolveStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Max entry removed when projecting onto the information pattern.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projected_leakage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Provenance {
    pub fn new(method: Method) -> Self {
        Provenance {
            method,
            oracle_pattern: None,
            solver: None,
            seed: None,
            projected_leakage: None,
            note: None,
        }
    }
}

/// A causal feedback `u = Kx` together with the pattern it must respect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "n")]
    pub state_dim: usize,
    #[serde(rename = "m")]
    pub input_dim: usize,
    #[serde(rename = "K", with = "matrix::rows")]
    pub k: DMatrix<f64>,
    pub pattern: SparsityPattern,
    pub provenance: Provenance,
}

impl Controller {
    /// Wraps a gain, checking causality and membership in `pattern`.
    pub fn new(
        lift: &BlockLift,
        k: DMatrix<f64>,
        pattern: SparsityPattern,
        provenance: Provenance,
    ) -> Result<Self> {
        check_shape("K", (lift.mt(), lift.nt()), k.shape())?;
        check_shape("controller pattern", (lift.mt(), lift.nt()), pattern.shape())?;
        if !is_lower_block_triangular(&k, lift.input_dim, lift.state_dim) {
            return Err(Error::validation("K must be lower block-triangular"));
        }
        if !sparsity::is_member(&k, &pattern)? {
            let l = sparsity::leakage(&k, &pattern)?;
            return Err(Error::InvariantViolation(format!(
                "K has entry {:.3e} at {:?} outside its pattern",
                l.max_abs, l.position
            )));
        }
        Ok(Controller {
            horizon: lift.horizon,
            state_dim: lift.state_dim,
            input_dim: lift.input_dim,
            k,
            pattern,
            provenance,
        })
    }

    /// Gain on the full causal pattern.
    pub fn causal(lift: &BlockLift, k: DMatrix<f64>) -> Result<Self> {
        let pattern = causal_pattern(lift);
        Self::new(lift, k, pattern, Provenance::new(Method::Custom))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Full lower-block-triangular `mT × nT` controller pattern.
pub fn causal_pattern(lift: &BlockLift) -> SparsityPattern {
    SparsityPattern::causal(BlockMeta {
        row_block: lift.input_dim,
        col_block: lift.state_dim,
        horizon: lift.horizon,
    })
}

/// `Φ_x = (I − Z(𝐀 + 𝐁K))⁻¹`, `Φ_u = KΦ_x`.
pub fn closed_loop_from_gain(k: &DMatrix<f64>, lift: &BlockLift) -> Result<ClosedLoopMap> {
    check_shape("K", (lift.mt(), lift.nt()), k.shape())?;
    let nt = lift.nt();
    let op = &lift.gamma - &lift.z_b * k;
    let phi_x = matrix::solve_lower(&op, &DMatrix::identity(nt, nt))?;
    let phi_u = k * &phi_x;
    Ok(ClosedLoopMap { phi_x, phi_u })
}

pub fn closed_loop_from_controller(k: &Controller, lift: &BlockLift) -> Result<ClosedLoopMap> {
    closed_loop_from_gain(&k.k, lift)
}

/// `K = Φ_uΦ_x⁻¹`, refusing maps whose achievability residual exceeds `tol_ach`.
///
/// The gain is projected onto `pattern` (the full causal pattern when
/// `None`); the removed magnitude is recorded in the provenance and must
/// stay below the leakage report threshold scaled by `max|K|`.
pub fn controller_from_map(
    phi: &ClosedLoopMap,
    lift: &BlockLift,
    pattern: Option<&SparsityPattern>,
    mut provenance: Provenance,
    tol_ach: f64,
) -> Result<Controller> {
    phi.check_shape(lift)?;
    let residual = phi.achievability_residual(lift);
    if !(residual <= tol_ach) {
        return Err(Error::NotAchievable {
            residual,
            tolerance: tol_ach,
        });
    }
    // K Φ_x = Φ_u  ⇔  Φ_xᵀ Kᵀ = Φ_uᵀ with Φ_xᵀ upper triangular.
    let phi_xt = phi.phi_x.transpose();
    let kt = phi_xt
        .solve_upper_triangular(&phi.phi_u.transpose())
        .ok_or_else(|| Error::validation("Φ_x is singular"))?;
    let mut k = kt.transpose();
    let pattern = pattern.cloned().unwrap_or_else(|| causal_pattern(lift));
    check_shape("controller pattern", k.shape(), pattern.shape())?;
    let leak = project_onto(&mut k, &pattern);
    let scale = matrix::max_abs(&k).max(1.0);
    if leak.exceeds(Leakage::DEFAULT_REPORT_THRESHOLD * scale) {
        return Err(Error::InvariantViolation(format!(
            "recovered K leaks {:.3e} at {:?} outside its pattern",
            leak.max_abs, leak.position
        )));
    }
    if leak.max_abs > 0.0 {
        provenance.projected_leakage = Some(leak.max_abs);
    }
    Controller::new(lift, k, pattern, provenance)
}

/// Zeroes every entry outside `pattern`, returning what was removed.
pub fn project_onto(y: &mut DMatrix<f64>, pattern: &SparsityPattern) -> Leakage {
    let leak = sparsity::leakage(y, pattern).expect("shape checked by caller");
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            if !pattern.get(i, j) {
                y[(i, j)] = 0.0;
            }
        }
    }
    leak
}

/// Which entry of `Φ` a decision variable stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhiEntry {
    X(usize, usize),
    U(usize, usize),
}

/// Decision variables for the causal entries of `Φ_x` followed by `Φ_u`.
#[derive(Debug, Clone)]
pub struct PhiVariables {
    n: usize,
    m: usize,
    horizon: usize,
    index: HashMap<PhiEntry, usize>,
    entries: Vec<PhiEntry>,
}

impl PhiVariables {
    pub fn new(lift: &BlockLift) -> Self {
        let (n, m, horizon) = (lift.state_dim, lift.input_dim, lift.horizon);
        let mut entries = Vec::new();
        for i in 0..n * horizon {
            for j in 0..n * horizon {
                if j / n <= i / n {
                    entries.push(PhiEntry::X(i, j));
                }
            }
        }
        for i in 0..m * horizon {
            for j in 0..n * horizon {
                if j / n <= i / m {
                    entries.push(PhiEntry::U(i, j));
                }
            }
        }
        let index = entries.iter().enumerate().map(|(k, &e)| (e, k)).collect();
        PhiVariables {
            n,
            m,
            horizon,
            index,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index(&self, e: PhiEntry) -> Option<usize> {
        self.index.get(&e).copied()
    }

    pub fn entry(&self, k: usize) -> PhiEntry {
        self.entries[k]
    }

    /// Reads the variable vector off a map.
    pub fn values(&self, phi: &ClosedLoopMap) -> DVector<f64> {
        DVector::from_iterator(
            self.entries.len(),
            self.entries.iter().map(|e| match *e {
                PhiEntry::X(i, j) => phi.phi_x[(i, j)],
                PhiEntry::U(i, j) => phi.phi_u[(i, j)],
            }),
        )
    }

    pub fn map(&self, values: &DVector<f64>) -> ClosedLoopMap {
        let (nt, mt) = (self.n * self.horizon, self.m * self.horizon);
        let mut phi = ClosedLoopMap {
            phi_x: DMatrix::zeros(nt, nt),
            phi_u: DMatrix::zeros(mt, nt),
        };
        for (k, e) in self.entries.iter().enumerate() {
            match *e {
                PhiEntry::X(i, j) => phi.phi_x[(i, j)] = values[k],
                PhiEntry::U(i, j) => phi.phi_u[(i, j)] = values[k],
            }
        }
        phi
    }
}

/// Which equation a constraint row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// Entry `(i, j)` of `(I − Z𝐀)Φ_x − Z𝐁Φ_u = I`.
    Achievability(usize, usize),
    /// `(Φ_uΓ)_{i,j} = 0`.
    InputPattern(usize, usize),
    /// `(Φ_xΓ)_{i,j} = 0`.
    StatePattern(usize, usize),
    /// Ties a `Φ_u` entry to its block-Toeplitz representative.
    ToeplitzTie(usize, usize),
}

#[derive(Debug, Clone)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub kind: RowKind,
}

/// Sparse affine equalities over a [`PhiVariables`] space.
#[derive(Debug, Clone)]
pub struct LinearConstraintSet {
    pub num_vars: usize,
    pub rows: Vec<LinearRow>,
}

impl LinearConstraintSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Max absolute violation at `values`.
    pub fn residual(&self, values: &DVector<f64>) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.coeffs.iter().map(|&(k, c)| c * values[k]).sum::<f64>() - r.rhs).abs())
            .fold(0.0, f64::max)
    }

    pub fn merge(mut self, other: LinearConstraintSet) -> Self {
        debug_assert_eq!(self.num_vars, other.num_vars);
        self.rows.extend(other.rows);
        self
    }
}

/// `(I − Z𝐀)Φ_x − Z𝐁Φ_u = I` on the causal support.
pub fn achievability_constraints(lift: &BlockLift) -> LinearConstraintSet {
    let vars = PhiVariables::new(lift);
    let (n, nt, mt) = (lift.state_dim, lift.nt(), lift.mt());
    let mut rows = Vec::new();
    for i in 0..nt {
        for j in 0..nt {
            if j / n > i / n {
                continue;
            }
            let mut coeffs = Vec::new();
            for k in 0..nt {
                let g = lift.gamma[(i, k)];
                if g != 0.0 {
                    if let Some(v) = vars.index(PhiEntry::X(k, j)) {
                        coeffs.push((v, g));
                    }
                }
            }
            for k in 0..mt {
                let b = lift.z_b[(i, k)];
                if b != 0.0 {
                    if let Some(v) = vars.index(PhiEntry::U(k, j)) {
                        coeffs.push((v, -b));
                    }
                }
            }
            rows.push(LinearRow {
                coeffs,
                rhs: if i == j { 1.0 } else { 0.0 },
                kind: RowKind::Achievability(i, j),
            });
        }
    }
    LinearConstraintSet {
        num_vars: vars.len(),
        rows,
    }
}

/// Sparsity-invariance equalities `Φ_uΓ ∈ Sparse(S)`, `Φ_xΓ ∈ Sparse(V_x)`,
/// one row per zero of `S` or `V_x` inside the causal support.
pub fn si_constraints(
    s: &SparsityPattern,
    vx: &SparsityPattern,
    lift: &BlockLift,
) -> Result<LinearConstraintSet> {
    let (n, m, nt, mt) = (lift.state_dim, lift.input_dim, lift.nt(), lift.mt());
    check_shape("S", (mt, nt), s.shape())?;
    check_shape("V_x", (nt, nt), vx.shape())?;
    let vars = PhiVariables::new(lift);
    let mut rows = Vec::new();
    let mut push = |i: usize, j: usize, input: bool| {
        let mut coeffs = Vec::new();
        for k in 0..nt {
            let g = lift.gamma[(k, j)];
            if g == 0.0 {
                continue;
            }
            let e = if input { PhiEntry::U(i, k) } else { PhiEntry::X(i, k) };
            if let Some(v) = vars.index(e) {
                coeffs.push((v, g));
            }
        }
        rows.push(LinearRow {
            coeffs,
            rhs: 0.0,
            kind: if input {
                RowKind::InputPattern(i, j)
            } else {
                RowKind::StatePattern(i, j)
            },
        });
    };
    for i in 0..mt {
        for j in 0..nt {
            if j / n <= i / m && !s.get(i, j) {
                push(i, j, true);
            }
        }
    }
    for i in 0..nt {
        for j in 0..nt {
            if j / n <= i / n && !vx.get(i, j) {
                push(i, j, false);
            }
        }
    }
    Ok(LinearConstraintSet {
        num_vars: vars.len(),
        rows,
    })
}

fn require_lti(lift: &BlockLift) -> Result<()> {
    if lift.lti {
        Ok(())
    } else {
        Err(Error::UnsupportedRestriction(
            "the block-Toeplitz restriction needs a time-invariant plant".into(),
        ))
    }
}

/// Ties every causal `Φ_u` entry to the entry with the same lag in the
/// first block column, leaving `mnT` free `Φ_u` parameters.
pub fn toeplitz_restriction(lift: &BlockLift) -> Result<LinearConstraintSet> {
    require_lti(lift)?;
    let vars = PhiVariables::new(lift);
    let (n, m, horizon) = (lift.state_dim, lift.input_dim, lift.horizon);
    let mut rows = Vec::new();
    for lag in 0..horizon {
        for t in 1..horizon - lag {
            for r in 0..m {
                for c in 0..n {
                    let (i, j) = ((t + lag) * m + r, t * n + c);
                    let rep = vars.index(PhiEntry::U(lag * m + r, c)).expect("causal entry");
                    let v = vars.index(PhiEntry::U(i, j)).expect("causal entry");
                    rows.push(LinearRow {
                        coeffs: vec![(v, 1.0), (rep, -1.0)],
                        rhs: 0.0,
                        kind: RowKind::ToeplitzTie(i, j),
                    });
                }
            }
        }
    }
    Ok(LinearConstraintSet {
        num_vars: vars.len(),
        rows,
    })
}

/// Free `Φ_u` parameters under the Toeplitz restriction (`mnT`).
pub fn toeplitz_free_variables(lift: &BlockLift) -> Result<usize> {
    require_lti(lift)?;
    Ok(lift.state_dim * lift.input_dim * lift.horizon)
}

/// Completes a `Φ_u` to an achievable pair: `Φ_x = Γ⁻¹(I + Z𝐁Φ_u)`.
pub fn eliminate_state_map(lift: &BlockLift, phi_u: &DMatrix<f64>) -> Result<ClosedLoopMap> {
    check_shape("Φ_u", (lift.mt(), lift.nt()), phi_u.shape())?;
    let nt = lift.nt();
    let rhs = DMatrix::<f64>::identity(nt, nt) + &lift.z_b * phi_u;
    let phi_x = matrix::solve_lower(&lift.gamma, &rhs)?;
    Ok(ClosedLoopMap {
        phi_x,
        phi_u: phi_u.clone(),
    })
}

/// Optional structural restriction on the closed-loop maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Restriction {
    #[default]
    None,
    /// Lower block-Toeplitz `Φ_u` (time-invariant plants only).
    Toeplitz,
}

/// Affine description of the achievable maps with `Φ_uΓ ∈ Sparse(S)`.
///
/// Writing `Ψ = Φ_uΓ`, achievability gives `Φ_xΓ = I + GΨ`, so
///
/// ```text
/// Φ = ([I; 0] + [G; I] Ψ) Γ⁻¹
/// ```
///
/// Each decision variable scales a set of unit entries of `Ψ`: one entry
/// in the unrestricted case, a whole block diagonal under the Toeplitz
/// restriction (`Ψ` is block Toeplitz iff `Φ_u` is, since `Γ` is). Entries
/// outside `S` never get a variable; the remaining sparsity-invariance
/// condition `I + GΨ ∈ Sparse(V_x)` is a set of linear equalities.
#[derive(Debug, Clone)]
pub struct Parameterization {
    pub state_dim: usize,
    pub input_dim: usize,
    pub horizon: usize,
    pub restriction: Restriction,
    pub pattern: SparsityPattern,
    /// `Ψ` positions `(row in mT, col in nT)` scaled by each variable.
    pub entries: Vec<Vec<(usize, usize)>>,
}

/// A sparse equality `Σ coeffs·y = rhs` over parameterization variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseEquality {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Parameterization {
    pub fn new(lift: &BlockLift, s: &SparsityPattern, restriction: Restriction) -> Result<Self> {
        let (n, m, horizon) = (lift.state_dim, lift.input_dim, lift.horizon);
        check_shape("S", (lift.mt(), lift.nt()), s.shape())?;
        let mut entries = Vec::new();
        match restriction {
            Restriction::None => {
                for (i, j) in s.ones_iter() {
                    if j / n <= i / m {
                        entries.push(vec![(i, j)]);
                    }
                }
            }
            Restriction::Toeplitz => {
                require_lti(lift)?;
                for lag in 0..horizon {
                    for r in 0..m {
                        for c in 0..n {
                            let first = s.get(lag * m + r, c);
                            let diag: Vec<(usize, usize)> = (0..horizon - lag)
                                .map(|t| ((t + lag) * m + r, t * n + c))
                                .collect();
                            if diag.iter().any(|&(i, j)| s.get(i, j) != first) {
                                return Err(Error::UnsupportedRestriction(format!(
                                    "pattern is not block Toeplitz at lag {lag}, entry ({r}, {c})"
                                )));
                            }
                            if first {
                                entries.push(diag);
                            }
                        }
                    }
                }
            }
        }
        Ok(Parameterization {
            state_dim: n,
            input_dim: m,
            horizon,
            restriction,
            pattern: s.clone(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `Ψ(y)`, an `mT × nT` matrix.
    pub fn psi(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut psi = DMatrix::zeros(self.input_dim * self.horizon, self.state_dim * self.horizon);
        for (v, idx) in self.entries.iter().enumerate() {
            for &(i, j) in idx {
                psi[(i, j)] += y[v];
            }
        }
        psi
    }

    /// Rows enforcing `(GΨ)_{j,k} = 0` wherever `V_x` is zero. Entries of
    /// `GΨ` that vanish structurally produce no row.
    pub fn state_equalities(&self, lift: &BlockLift, vx: &SparsityPattern) -> Result<Vec<SparseEquality>> {
        check_shape("V_x", (lift.nt(), lift.nt()), vx.shape())?;
        let nt = lift.nt();
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut rows: Vec<SparseEquality> = Vec::new();
        for (v, idx) in self.entries.iter().enumerate() {
            for &(a, b) in idx {
                for j in 0..nt {
                    let g = lift.g[(j, a)];
                    if g == 0.0 || vx.get(j, b) {
                        continue;
                    }
                    let r = *index.entry((j, b)).or_insert_with(|| {
                        rows.push(SparseEquality {
                            coeffs: Vec::new(),
                            rhs: 0.0,
                        });
                        rows.len() - 1
                    });
                    match rows[r].coeffs.iter_mut().find(|(k, _)| *k == v) {
                        Some(entry) => entry.1 += g,
                        None => rows[r].coeffs.push((v, g)),
                    }
                }
            }
        }
        // Identity entries of I + GΨ must also sit inside V_x.
        if (0..nt).any(|i| !vx.get(i, i)) {
            return Err(Error::validation("V_x must contain the diagonal"));
        }
        Ok(rows)
    }

    /// `Φ_xΓ = I + GΨ`, projected onto `V_x` when given.
    pub fn state_factor(
        &self,
        lift: &BlockLift,
        psi: &DMatrix<f64>,
        vx: Option<&SparsityPattern>,
    ) -> (DMatrix<f64>, Leakage) {
        let nt = lift.nt();
        let mut v = DMatrix::<f64>::identity(nt, nt) + &lift.g * psi;
        let leak = match vx {
            Some(p) => project_onto(&mut v, p),
            None => Leakage {
                max_abs: 0.0,
                position: None,
            },
        };
        (v, leak)
    }

    /// Closed-loop maps for the parameter vector `y`.
    pub fn closed_loop(
        &self,
        lift: &BlockLift,
        y: &DVector<f64>,
        vx: Option<&SparsityPattern>,
    ) -> ClosedLoopMap {
        let psi = self.psi(y);
        let (v, _) = self.state_factor(lift, &psi, vx);
        ClosedLoopMap {
            phi_x: v * &lift.gamma_inv,
            phi_u: psi * &lift.gamma_inv,
        }
    }

    /// `K = Ψ (I + GΨ)⁻¹` computed by back substitution on the projected
    /// state factor. When `V_x` comes from `generate_vx(S)`, every entry of
    /// `K` outside `S` is a sum of exact zeros, so `K ∈ Sparse(S)` holds
    /// exactly.
    pub fn controller_gain(
        &self,
        lift: &BlockLift,
        y: &DVector<f64>,
        vx: Option<&SparsityPattern>,
    ) -> Result<(DMatrix<f64>, Leakage)> {
        let psi = self.psi(y);
        let (v, leak) = self.state_factor(lift, &psi, vx);
        let vt = v.transpose();
        let upper = (0..vt.nrows()).all(|i| (0..i).all(|j| vt[(i, j)] == 0.0));
        let kt = if upper {
            vt.solve_upper_triangular(&psi.transpose())
        } else {
            vt.lu().solve(&psi.transpose())
        }
        .ok_or_else(|| Error::validation("state factor I + GΨ is singular"))?;
        Ok((kt.transpose(), leak))
    }
}
