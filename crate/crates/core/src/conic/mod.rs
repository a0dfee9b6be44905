//! Semidefinite-programming facade.
//!
//! Problems are stated over named scalar variables `y` as
//!
//! ```text
//! minimize    c₀ + cᵀy + yᵀQy
//! subject to  E y = f
//!             F_k(y) = F_k0 + Σ_i y_i F_ki ⪰ 0   (k = 1..K)
//! ```
//!
//! PSD blocks are anything implementing [`AffineMatrixMap`]; [`DenseLmi`]
//! covers hand-written blocks and structured maps can supply their own
//! Schur-complement kernels. Equalities are eliminated through a null-space
//! basis, a pure quadratic objective is minimized in closed form, and the
//! remaining conic program goes to the embedded primal-dual interior-point
//! method in [`ipm`].

mod dense;
pub mod ipm;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix;

pub use dense::DenseLmi;

/// Termination tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    /// Max absolute violation of `E y = f`.
    pub tol_eq: f64,
    /// Lowest admissible eigenvalue of a PSD block is `-tol_psd`.
    pub tol_psd: f64,
    /// Relative primal-dual objective gap.
    pub tol_gap: f64,
    pub max_iter: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            tol_eq: 1e-8,
            tol_psd: 1e-7,
            tol_gap: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::MaxIter => "max_iter",
        };
        f.write_str(s)
    }
}

/// Solver diagnostics, serializable into controller provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub dual_objective: f64,
    /// Max absolute violation of the equality constraints.
    pub equality_residual: f64,
    /// Relative residual of the conjugate (dual) feasibility equations.
    pub dual_residual: f64,
    /// Smallest eigenvalue over all PSD blocks at the returned point;
    /// `+∞` (stored as `null`) when there are none.
    #[serde(with = "unbounded_min")]
    pub psd_min_eig: f64,
    pub rel_gap: f64,
    pub tolerances: ToleranceConfig,
}

mod unbounded_min {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        v.is_finite().then_some(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub values: DVector<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub equality_residual: f64,
    pub dual_residual: f64,
    pub psd_min_eig: f64,
    pub rel_gap: f64,
    pub iterations: usize,
    pub tolerances: ToleranceConfig,
    /// Human-readable note on how the solve ended.
    pub detail: String,
}

impl SdpSolution {
    pub fn stats(&self) -> SolveStats {
        SolveStats {
            status: self.status,
            iterations: self.iterations,
            objective: self.objective,
            dual_objective: self.dual_objective,
            equality_residual: self.equality_residual,
            dual_residual: self.dual_residual,
            psd_min_eig: self.psd_min_eig,
            rel_gap: self.rel_gap,
            tolerances: self.tolerances,
        }
    }

    /// Turns a non-optimal status into [`Error::Solver`].
    pub fn require_optimal(self) -> Result<Self> {
        if self.status == SolveStatus::Optimal {
            Ok(self)
        } else {
            Err(Error::Solver {
                status: self.status,
                detail: format!(
                    "{} (iterations {}, rel_gap {:.2e}, psd_min_eig {:.2e}, dual_residual {:.2e})",
                    self.detail, self.iterations, self.rel_gap, self.psd_min_eig, self.dual_residual
                ),
            })
        }
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }
}

/// A symmetric affine matrix map `y ↦ F0 + Σ y_i F_i`.
///
/// Implementations must keep every `F_i` symmetric. `schur` returns the
/// matrix `M_ij = tr(F_i X F_j W)` for symmetric `X`, `W`.
pub trait AffineMatrixMap: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn num_vars(&self) -> usize;
    /// `F0`.
    fn constant(&self) -> DMatrix<f64>;
    /// `Σ y_i F_i`.
    fn apply_linear(&self, y: &DVector<f64>) -> DMatrix<f64>;
    /// `[tr(F_i H)]_i` for symmetric `H`.
    fn adjoint(&self, h: &DMatrix<f64>) -> DVector<f64>;
    fn schur(&self, x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64>;

    fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        self.constant() + self.apply_linear(y)
    }

    /// `F_i`, materialized.
    fn coefficient(&self, i: usize) -> DMatrix<f64> {
        let mut e = DVector::zeros(self.num_vars());
        e[i] = 1.0;
        self.apply_linear(&e)
    }
}

/// Handle to a declared scalar variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equality {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `c₀ + cᵀy + yᵀQy` with `Q ⪰ 0`.
#[derive(Debug, Clone, Default)]
pub struct Objective {
    pub constant: f64,
    pub linear: Vec<(usize, f64)>,
    pub quadratic: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    names: Vec<String>,
    equalities: Vec<Equality>,
    blocks: Vec<Arc<dyn AffineMatrixMap>>,
    objective: Objective,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: impl Into<String>) -> VarId {
        self.names.push(name.into());
        VarId(self.names.len() - 1)
    }

    /// Declares `count` variables named `prefix[i]`, returning the first.
    pub fn add_variables(&mut self, prefix: &str, count: usize) -> VarId {
        let first = VarId(self.names.len());
        for i in 0..count {
            self.names.push(format!("{prefix}[{i}]"));
        }
        first
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn equalities(&self) -> &[Equality] {
        &self.equalities
    }

    pub fn blocks(&self) -> &[Arc<dyn AffineMatrixMap>] {
        &self.blocks
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn add_equality(&mut self, coeffs: &[(VarId, f64)], rhs: f64) -> Result<()> {
        for (v, c) in coeffs {
            self.check_var(*v)?;
            if !c.is_finite() {
                return Err(Error::validation("non-finite equality coefficient"));
            }
        }
        self.equalities.push(Equality {
            coeffs: coeffs.iter().map(|(v, c)| (v.0, *c)).collect(),
            rhs,
        });
        Ok(())
    }

    /// Adds `block(y) ⪰ 0`. The block must be defined over all variables
    /// declared so far; later variables do not enter it.
    pub fn add_psd_block(&mut self, block: Arc<dyn AffineMatrixMap>) -> Result<()> {
        if block.num_vars() > self.num_vars() {
            return Err(Error::validation(format!(
                "PSD block references {} variables but only {} are declared",
                block.num_vars(),
                self.num_vars()
            )));
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Adds the dense block `F0 + Σ y_v F_v ⪰ 0`; inputs are symmetrized.
    pub fn add_lmi(&mut self, constant: DMatrix<f64>, terms: &[(VarId, DMatrix<f64>)]) -> Result<()> {
        for (v, _) in terms {
            self.check_var(*v)?;
        }
        let lmi = DenseLmi::new(
            self.num_vars(),
            constant,
            terms.iter().map(|(v, f)| (v.0, f.clone())).collect(),
        )?;
        self.add_psd_block(Arc::new(lmi))
    }

    pub fn set_objective(&mut self, linear: &[(VarId, f64)]) -> Result<()> {
        for (v, _) in linear {
            self.check_var(*v)?;
        }
        self.objective = Objective {
            constant: 0.0,
            linear: linear.iter().map(|(v, c)| (v.0, *c)).collect(),
            quadratic: None,
        };
        Ok(())
    }

    /// Sets `c₀ + cᵀy + yᵀQy`; `Q` is symmetrized and must be PSD.
    pub fn set_quadratic_objective(
        &mut self,
        constant: f64,
        linear: &[(VarId, f64)],
        q: DMatrix<f64>,
    ) -> Result<()> {
        let nv = self.num_vars();
        crate::error::check_shape("objective Q", (nv, nv), q.shape())?;
        for (v, _) in linear {
            self.check_var(*v)?;
        }
        let q = matrix::symmetrize(&q);
        let scale = matrix::max_abs(&q).max(1.0);
        if matrix::min_eigenvalue(&q) < -1e-10 * scale {
            return Err(Error::validation("quadratic objective must be convex"));
        }
        self.objective = Objective {
            constant,
            linear: linear.iter().map(|(v, c)| (v.0, *c)).collect(),
            quadratic: Some(q),
        };
        Ok(())
    }

    fn check_var(&self, v: VarId) -> Result<()> {
        if v.0 < self.num_vars() {
            Ok(())
        } else {
            Err(Error::validation(format!("undeclared variable index {}", v.0)))
        }
    }

    pub(crate) fn cost_vector(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.num_vars());
        for &(v, w) in &self.objective.linear {
            c[v] += w;
        }
        c
    }

    pub fn objective_value(&self, y: &DVector<f64>) -> f64 {
        let mut v = self.objective.constant + self.cost_vector().dot(y);
        if let Some(q) = &self.objective.quadratic {
            v += y.dot(&(q * y));
        }
        v
    }

    /// Max absolute violation of the equalities at `y`.
    pub fn equality_residual(&self, y: &DVector<f64>) -> f64 {
        self.equalities
            .iter()
            .map(|e| (e.coeffs.iter().map(|&(v, c)| c * y[v]).sum::<f64>() - e.rhs).abs())
            .fold(0.0, f64::max)
    }

    /// Evaluates block `k` at `y` (padding `y` to the block's variables).
    pub fn eval_block(&self, k: usize, y: &DVector<f64>) -> DMatrix<f64> {
        let b = &self.blocks[k];
        b.eval(&y.rows(0, b.num_vars()).into_owned())
    }

    /// Smallest eigenvalue over all blocks at `y` (`+∞` without blocks).
    pub fn psd_min_eig(&self, y: &DVector<f64>) -> f64 {
        (0..self.blocks.len())
            .map(|k| matrix::min_eigenvalue(&self.eval_block(k, y)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Self-describing JSON form: variables, equality triplets and every
    /// block's constant and coefficient matrices.
    pub fn to_json_dump(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Term {
            var: usize,
            matrix: Vec<Vec<f64>>,
        }
        #[derive(Serialize)]
        struct Block {
            dim: usize,
            constant: Vec<Vec<f64>>,
            terms: Vec<Term>,
        }
        #[derive(Serialize)]
        struct Dump<'a> {
            variables: &'a [String],
            equalities: Vec<(usize, usize, f64)>,
            equality_rhs: Vec<f64>,
            blocks: Vec<Block>,
            objective_constant: f64,
            objective_linear: &'a [(usize, f64)],
            objective_quadratic: Option<Vec<Vec<f64>>>,
        }
        let blocks = self
            .blocks
            .iter()
            .map(|b| Block {
                dim: b.dim(),
                constant: matrix::to_rows(&b.constant()),
                terms: (0..b.num_vars())
                    .filter_map(|i| {
                        let f = b.coefficient(i);
                        (matrix::max_abs(&f) > 0.0).then(|| Term {
                            var: i,
                            matrix: matrix::to_rows(&f),
                        })
                    })
                    .collect(),
            })
            .collect();
        let dump = Dump {
            variables: &self.names,
            equalities: self
                .equalities
                .iter()
                .enumerate()
                .flat_map(|(r, e)| e.coeffs.iter().map(move |&(v, c)| (r, v, c)))
                .collect(),
            equality_rhs: self.equalities.iter().map(|e| e.rhs).collect(),
            blocks,
            objective_constant: self.objective.constant,
            objective_linear: &self.objective.linear,
            objective_quadratic: self.objective.quadratic.as_ref().map(matrix::to_rows),
        };
        Ok(serde_json::to_string_pretty(&dump)?)
    }
}

/// Affine parameterization `y = y0 + N z` of the equality-feasible set.
#[derive(Debug, Clone)]
struct Elimination {
    y0: DVector<f64>,
    /// `None` is the identity basis.
    basis: Option<DMatrix<f64>>,
}

impl Elimination {
    fn dim(&self) -> usize {
        self.basis.as_ref().map_or(self.y0.len(), |n| n.ncols())
    }

    fn lift(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Some(n) => &self.y0 + n * z,
            None => &self.y0 + z,
        }
    }

    fn reduce_vec(&self, g: DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Some(n) => n.tr_mul(&g),
            None => g,
        }
    }

    fn reduce_mat(&self, m: DMatrix<f64>) -> DMatrix<f64> {
        match &self.basis {
            Some(n) => n.tr_mul(&(m * n)),
            None => m,
        }
    }
}

/// Null-space elimination of `E y = f`. Returns `None` when inconsistent.
fn eliminate(problem: &SdpProblem, tol: &ToleranceConfig) -> Option<Elimination> {
    let nv = problem.num_vars();
    if problem.equalities.is_empty() {
        return Some(Elimination {
            y0: DVector::zeros(nv),
            basis: None,
        });
    }
    let p = problem.equalities.len();
    let mut e = DMatrix::zeros(p, nv);
    let mut f = DVector::zeros(p);
    for (r, eq) in problem.equalities.iter().enumerate() {
        for &(v, c) in &eq.coeffs {
            e[(r, v)] += c;
        }
        f[r] = eq.rhs;
    }
    // Square the system to nv × nv without changing its row space.
    let (sq, g) = if p > nv {
        let qr = e.clone().qr();
        let g = qr.q().tr_mul(&f);
        (qr.r(), g)
    } else {
        let mut sq = DMatrix::zeros(nv, nv);
        sq.rows_mut(0, p).copy_from(&e);
        let mut g = DVector::zeros(nv);
        g.rows_mut(0, p).copy_from(&f);
        (sq, g)
    };
    let svd = sq.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let smax = svd.singular_values.max();
    let thresh = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let mut y0 = DVector::zeros(nv);
    let mut null_cols = Vec::new();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > thresh {
            let coef = u.column(k).dot(&g) / s;
            y0 += vt.row(k).transpose() * coef;
        } else {
            null_cols.push(k);
        }
    }
    let resid = (&e * &y0 - &f).amax();
    if resid > tol.tol_eq.max(1e-12 * (1.0 + f.amax())) {
        return None;
    }
    let mut basis = DMatrix::zeros(nv, null_cols.len());
    for (j, &k) in null_cols.iter().enumerate() {
        basis.set_column(j, &vt.row(k).transpose());
    }
    Some(Elimination {
        y0,
        basis: Some(basis),
    })
}

/// A block restricted to the reduced variables `z` (plus trailing
/// variables that do not enter it).
#[derive(Debug)]
struct ReducedBlock<'a> {
    inner: &'a dyn AffineMatrixMap,
    elim: &'a Elimination,
    constant: DMatrix<f64>,
    num_vars: usize,
}

impl<'a> ReducedBlock<'a> {
    fn new(inner: &'a dyn AffineMatrixMap, elim: &'a Elimination, num_vars: usize) -> Self {
        let y0 = elim.y0.rows(0, inner.num_vars()).into_owned();
        let constant = inner.eval(&y0);
        ReducedBlock {
            inner,
            elim,
            constant,
            num_vars,
        }
    }

    fn to_inner(&self, z: &DVector<f64>) -> DVector<f64> {
        let q = self.elim.dim();
        let dy = match &self.elim.basis {
            Some(n) => n * z.rows(0, q),
            None => z.rows(0, q).into_owned(),
        };
        dy.rows(0, self.inner.num_vars()).into_owned()
    }

    fn pad_vec(&self, g: DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.elim.y0.len());
        full.rows_mut(0, g.len()).copy_from(&g);
        let red = self.elim.reduce_vec(full);
        let mut out = DVector::zeros(self.num_vars);
        out.rows_mut(0, red.len()).copy_from(&red);
        out
    }
}

impl AffineMatrixMap for ReducedBlock<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn num_vars(&self) -> usize {
        self.num_vars
    }

    fn constant(&self) -> DMatrix<f64> {
        self.constant.clone()
    }

    fn apply_linear(&self, z: &DVector<f64>) -> DMatrix<f64> {
        self.inner.apply_linear(&self.to_inner(z))
    }

    fn adjoint(&self, h: &DMatrix<f64>) -> DVector<f64> {
        self.pad_vec(self.inner.adjoint(h))
    }

    fn schur(&self, x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.inner.schur(x, w);
        let nv = self.elim.y0.len();
        let k = m.nrows();
        let full = if k == nv {
            m
        } else {
            let mut full = DMatrix::zeros(nv, nv);
            full.view_mut((0, 0), (k, k)).copy_from(&m);
            full
        };
        let red = self.elim.reduce_mat(full);
        let q = red.nrows();
        let mut out = DMatrix::zeros(self.num_vars, self.num_vars);
        out.view_mut((0, 0), (q, q)).copy_from(&red);
        out
    }
}

/// Solves `problem`; infeasible and unbounded outcomes are statuses.
pub fn solve(problem: &SdpProblem, tol: &ToleranceConfig) -> SdpSolution {
    let nv = problem.num_vars();
    let finish = |status: SolveStatus, y: DVector<f64>, iters: usize, dual: f64, dres: f64, detail: String| {
        finalize(problem, tol, status, y, iters, dual, dres, detail)
    };
    let Some(elim) = eliminate(problem, tol) else {
        return finish(
            SolveStatus::Infeasible,
            DVector::zeros(nv),
            0,
            f64::NAN,
            f64::NAN,
            "equality constraints are inconsistent".into(),
        );
    };
    let q = elim.dim();
    let c = problem.cost_vector();
    let mut cz = elim.reduce_vec(c.clone());
    let mut qz = None;
    if let Some(qm) = &problem.objective.quadratic {
        cz += elim.reduce_vec(qm * &elim.y0 * 2.0);
        qz = Some(matrix::symmetrize(&elim.reduce_mat(qm.clone())));
    }

    if problem.blocks.is_empty() {
        return solve_unconstrained(problem, tol, &elim, cz, qz);
    }

    // Epigraph lowering of the quadratic term: t ≥ ‖R z‖², Q_z = RᵀR.
    let mut extra: Vec<Box<dyn AffineMatrixMap>> = Vec::new();
    let mut num_red = q;
    if let Some(qz) = &qz {
        let eig = SymmetricEigen::new(qz.clone());
        let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        let keep: Vec<usize> = (0..q).filter(|&i| eig.eigenvalues[i] > 1e-12 * scale).collect();
        if !keep.is_empty() {
            let r = keep.len();
            num_red = q + 1;
            let mut f0 = DMatrix::zeros(r + 1, r + 1);
            f0.view_mut((0, 0), (r, r)).fill_with_identity();
            let mut terms = Vec::new();
            for i in 0..q {
                let mut fi = DMatrix::zeros(r + 1, r + 1);
                for (row, &k) in keep.iter().enumerate() {
                    let v = eig.eigenvalues[k].sqrt() * eig.eigenvectors[(i, k)];
                    fi[(row, r)] = v;
                    fi[(r, row)] = v;
                }
                terms.push((i, fi));
            }
            let mut ft = DMatrix::zeros(r + 1, r + 1);
            ft[(r, r)] = 1.0;
            terms.push((q, ft));
            extra.push(Box::new(
                DenseLmi::new(q + 1, f0, terms).expect("well-formed epigraph block"),
            ));
        }
    }
    let mut c_red = DVector::zeros(num_red);
    c_red.rows_mut(0, q).copy_from(&cz);
    if num_red > q {
        c_red[q] = 1.0;
    }
    let reduced: Vec<ReducedBlock> = problem
        .blocks
        .iter()
        .map(|b| ReducedBlock::new(b.as_ref(), &elim, num_red))
        .collect();
    let mut maps: Vec<&dyn AffineMatrixMap> = reduced.iter().map(|b| b as &dyn AffineMatrixMap).collect();
    maps.extend(extra.iter().map(|b| b.as_ref()));

    let offset = problem.objective_value(&elim.y0);
    let out = ipm::run_with_offset(&maps, &c_red, offset, tol);
    let z = out.z.rows(0, q).into_owned();
    let y = elim.lift(&z);
    let dual = out.dual_objective + offset;
    finish(out.status, y, out.iterations, dual, out.dual_residual, out.detail)
}

fn solve_unconstrained(
    problem: &SdpProblem,
    tol: &ToleranceConfig,
    elim: &Elimination,
    cz: DVector<f64>,
    qz: Option<DMatrix<f64>>,
) -> SdpSolution {
    let q = elim.dim();
    let cscale = 1.0 + cz.amax();
    let (z, status, detail) = match qz {
        None => {
            if cz.amax() <= tol.tol_gap * cscale {
                (DVector::zeros(q), SolveStatus::Optimal, "objective is constant".to_string())
            } else {
                (DVector::zeros(q), SolveStatus::Unbounded, "linear objective without constraints".to_string())
            }
        }
        Some(qz) => {
            // min cᵀz + zᵀQz: 2Qz = −c via the eigen pseudo-inverse.
            let eig = SymmetricEigen::new(qz);
            let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
            let mut z = DVector::zeros(q);
            let mut unbounded = false;
            for k in 0..q {
                let v = eig.eigenvectors.column(k);
                let proj = v.dot(&cz);
                if eig.eigenvalues[k] > 1e-12 * scale {
                    z -= v * (proj / (2.0 * eig.eigenvalues[k]));
                } else if proj.abs() > tol.tol_gap * cscale {
                    unbounded = true;
                }
            }
            if unbounded {
                (z, SolveStatus::Unbounded, "objective decreases along a null direction of Q".to_string())
            } else {
                (z, SolveStatus::Optimal, "closed-form quadratic minimizer".to_string())
            }
        }
    };
    let y = elim.lift(&z);
    let obj = problem.objective_value(&y);
    finalize(problem, tol, status, y, 0, obj, 0.0, detail)
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    problem: &SdpProblem,
    tol: &ToleranceConfig,
    mut status: SolveStatus,
    y: DVector<f64>,
    iterations: usize,
    dual_objective: f64,
    dual_residual: f64,
    mut detail: String,
) -> SdpSolution {
    let objective = problem.objective_value(&y);
    let equality_residual = problem.equality_residual(&y);
    let psd_min_eig = problem.psd_min_eig(&y);
    let rel_gap = if dual_objective.is_finite() {
        (objective - dual_objective).abs() / (1.0 + objective.abs() + dual_objective.abs())
    } else {
        f64::NAN
    };
    if status == SolveStatus::Optimal {
        let eq_scale = 1.0
            + problem
                .equalities
                .iter()
                .map(|e| e.rhs.abs())
                .fold(0.0, f64::max);
        let failed = if equality_residual > tol.tol_eq * eq_scale {
            Some(format!("equality residual {equality_residual:.2e}"))
        } else if psd_min_eig < -tol.tol_psd {
            Some(format!("PSD violation {psd_min_eig:.2e}"))
        } else if !(rel_gap <= tol.tol_gap) {
            Some(format!("relative gap {rel_gap:.2e}"))
        } else {
            None
        };
        if let Some(f) = failed {
            status = SolveStatus::MaxIter;
            detail = format!("converged iterate fails final check: {f}");
        }
    }
    SdpSolution {
        status,
        values: y,
        objective,
        dual_objective,
        equality_residual,
        dual_residual,
        psd_min_eig,
        rel_gap,
        iterations,
        tolerances: *tol,
        detail,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn eigenvalue_lp() {
        let mut p = SdpProblem::new();
        let lam = p.add_variable("lambda");
        p.add_lmi(-diag(&[1.0, 2.0, 3.0]), &[(lam, DMatrix::identity(3, 3))])
            .unwrap();
        p.set_objective(&[(lam, 1.0)]).unwrap();
        let sol = solve(&p, &ToleranceConfig::default());
        assert_eq!(sol.status, SolveStatus::Optimal, "{}", sol.detail);
        assert!((sol.value(lam) - 3.0).abs() < 1e-7);
    }

    #[test]
    fn fixed_variable_feasibility() {
        let mut p = SdpProblem::new();
        let x = p.add_variable("x");
        p.add_equality(&[(x, 1.0)], 1.0).unwrap();
        p.add_lmi(DMatrix::zeros(1, 1), &[(x, DMatrix::identity(1, 1))])
            .unwrap();
        let sol = solve(&p, &ToleranceConfig::default());
        assert_eq!(sol.status, SolveStatus::Optimal, "{}", sol.detail);
        assert!((sol.value(x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_lmi() {
        // x ≥ 1 and x ≤ 0.
        let mut p = SdpProblem::new();
        let x = p.add_variable("x");
        p.add_lmi(diag(&[-1.0, 0.0]), &[(x, diag(&[1.0, -1.0]))]).unwrap();
        p.set_objective(&[(x, 1.0)]).unwrap();
        let sol = solve(&p, &ToleranceConfig::default());
        assert_eq!(sol.status, SolveStatus::Infeasible, "{}", sol.detail);
    }

    #[test]
    fn inconsistent_equalities() {
        let mut p = SdpProblem::new();
        let x = p.add_variable("x");
        p.add_equality(&[(x, 1.0)], 1.0).unwrap();
        p.add_equality(&[(x, 2.0)], 1.0).unwrap();
        let sol = solve(&p, &ToleranceConfig::default());
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_lmi() {
        let mut p = SdpProblem::new();
        let x = p.add_variable("x");
        p.add_lmi(DMatrix::zeros(1, 1), &[(x, DMatrix::identity(1, 1))])
            .unwrap();
        p.set_objective(&[(x, -1.0)]).unwrap();
        let sol = solve(&p, &ToleranceConfig::default());
        assert_eq!(sol.status, SolveStatus::Unbounded, "{}", sol.detail);
    }

    #[test]
    fn quadratic_closed_form() {
        // (x − 2)² + (y + 1)² with x + y = 3.
        let mut p = SdpProblem::new();
        let x = p.add_variable("x");
        let y = p.add_variable("y");
        p.add_equality(&[(x, 1.0), (y, 1.0)], 3.0).unwrap();
        p.set_quadratic_objective(5.0, &[(x, -4.0), (y, 2.0)], DMatrix::identity(2, 2))
            .unwrap();
        let sol = solve(&p, &ToleranceConfig::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.value(x) - 3.0).abs() < 1e-12);
        assert!((sol.value(y) - 0.0).abs() < 1e-12);
        assert!((sol.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_with_psd_block_uses_epigraph() {
        // min (x − 2)² s.t. x ≤ 1.
        let mut p = SdpProblem::new();
        let x = p.add_variable("x");
        p.add_lmi(DMatrix::identity(1, 1), &[(x, -DMatrix::identity(1, 1))])
            .unwrap();
        p.set_quadratic_objective(4.0, &[(x, -4.0)], DMatrix::identity(1, 1))
            .unwrap();
        let sol = solve(&p, &ToleranceConfig::default());
        assert_eq!(sol.status, SolveStatus::Optimal, "{}", sol.detail);
        assert!((sol.value(x) - 1.0).abs() < 1e-6);
        assert!((sol.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn dump_lists_coefficients() {
        let mut p = SdpProblem::new();
        let x = p.add_variable("x");
        p.add_lmi(DMatrix::zeros(1, 1), &[(x, DMatrix::identity(1, 1))])
            .unwrap();
        p.add_equality(&[(x, 2.0)], 4.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json_dump().unwrap()).unwrap();
        assert_eq!(v["variables"][0], "x");
        assert_eq!(v["equalities"][0][2], 2.0);
        assert_eq!(v["blocks"][0]["terms"][0]["matrix"][0][0], 1.0);
    }

    #[test]
    fn deterministic() {
        let mut p = SdpProblem::new();
        let a = p.add_variable("a");
        let b = p.add_variable("b");
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        p.add_lmi(-f, &[(a, DMatrix::identity(2, 2)), (b, diag(&[1.0, 0.0]))])
            .unwrap();
        p.set_objective(&[(a, 1.0), (b, 0.5)]).unwrap();
        let s1 = solve(&p, &ToleranceConfig::default());
        let s2 = solve(&p, &ToleranceConfig::default());
        assert_eq!(s1.values, s2.values);
    }
}
