//! Infeasible-start primal-dual path-following method for
//!
//! ```text
//! minimize cᵀz  subject to  S_k = C_k + A_k(z) ⪰ 0
//! ```
//!
//! paired with its conjugate `maximize −Σ tr(C_k X_k)` subject to
//! `Σ A_k*(X_k) = c`, `X_k ⪰ 0`. Search directions are HKM with a
//! Mehrotra predictor-corrector; the Schur complement system is formed by
//! each block's own kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use super::{AffineMatrixMap, SolveStatus, ToleranceConfig};
use crate::matrix::symmetrize;

/// Certificate ratio below which infeasibility/unboundedness is declared.
const TOL_CERT: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct IpmOutcome {
    pub status: SolveStatus,
    pub z: DVector<f64>,
    pub iterations: usize,
    /// `−Σ tr(C_k X_k)`.
    pub dual_objective: f64,
    /// `‖c − Σ A_k*(X_k)‖_∞ / (1 + ‖c‖_∞)`.
    pub dual_residual: f64,
    pub detail: String,
}

enum Factor {
    Chol(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

impl Factor {
    fn new(m: &DMatrix<f64>) -> Option<Factor> {
        if let Some(c) = Cholesky::new(m.clone()) {
            return Some(Factor::Chol(c));
        }
        let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut reg = m.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += 1e-13 * scale;
        }
        if let Some(c) = Cholesky::new(reg) {
            return Some(Factor::Chol(c));
        }
        let lu = m.clone().lu();
        lu.is_invertible().then_some(Factor::Lu(lu))
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Factor::Chol(c) => c.solve(b),
            Factor::Lu(l) => l.solve(b).unwrap_or_else(|| DVector::zeros(b.len())),
        }
    }
}

/// Largest `α` with `x + α·dx ⪰ 0` (infinite if `dx` is PSD), given the
/// Cholesky factor of `x`.
fn max_step(chol_x: &Cholesky<f64, Dyn>, dx: &DMatrix<f64>) -> f64 {
    let l = chol_x.l_dirty();
    let Some(y) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(z) = l.solve_lower_triangular(&y.transpose()) else {
        return 0.0;
    };
    let lam = symmetrize(&z)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

struct Iterate {
    z: DVector<f64>,
    x: Vec<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
}

/// Runs the method. `offset` is added to both objectives when measuring
/// the relative gap, so the gap refers to the caller's objective scale.
pub fn run(blocks: &[&dyn AffineMatrixMap], c: &DVector<f64>, tol: &ToleranceConfig) -> IpmOutcome {
    run_with_offset(blocks, c, 0.0, tol)
}

pub fn run_with_offset(
    blocks: &[&dyn AffineMatrixMap],
    c: &DVector<f64>,
    offset: f64,
    tol: &ToleranceConfig,
) -> IpmOutcome {
    let q = c.len();
    let dims: Vec<usize> = blocks.iter().map(|b| b.dim()).collect();
    let total_dim: usize = dims.iter().sum();
    let consts: Vec<DMatrix<f64>> = blocks.iter().map(|b| b.constant()).collect();
    let cnorm = c.amax();

    // Starting point scaled to the data.
    let mut it = Iterate {
        z: DVector::zeros(q),
        x: Vec::new(),
        s: Vec::new(),
    };
    let mut coef_norm = vec![0.0_f64; q];
    let mut gram = DMatrix::<f64>::zeros(q, q);
    for (k, b) in blocks.iter().enumerate() {
        let d = dims[k];
        let eye = DMatrix::<f64>::identity(d, d);
        let gk = b.schur(&eye, &eye);
        let fnorm: Vec<f64> = gk.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
        gram += gk;
        for i in 0..q {
            coef_norm[i] = coef_norm[i].max(fnorm[i]);
        }
        let ratio = (0..q)
            .filter(|&i| fnorm[i] > 0.0)
            .map(|i| (1.0 + c[i].abs()) / (1.0 + fnorm[i]))
            .fold(0.0, f64::max);
        let xi = 10f64.max((d as f64).sqrt()).max(d as f64 * ratio);
        let eta = 10f64
            .max((d as f64).sqrt())
            .max(consts[k].norm())
            .max(fnorm.iter().copied().fold(0.0, f64::max));
        it.x.push(eye.clone() * xi);
        it.s.push(eye * eta);
    }
    if let Some(i) = (0..q).find(|&i| coef_norm[i] == 0.0 && c[i] != 0.0) {
        return IpmOutcome {
            status: SolveStatus::Unbounded,
            z: it.z,
            iterations: 0,
            dual_objective: f64::NAN,
            dual_residual: f64::NAN,
            detail: format!("variable {i} has nonzero cost and enters no PSD block"),
        };
    }
    // Restores A*(ΔX) = r_p after the HKM formula loses it to cancellation.
    let gram = Cholesky::new(symmetrize(&gram));
    let cscale = 1.0 + consts.iter().map(|m| m.norm()).fold(0.0, f64::max);

    let mut step_factor = 0.9;
    let mut stalls = 0;
    let mut last = (f64::NAN, f64::NAN, f64::NAN);
    // Last iterate meeting the caller's tolerances, returned if progress
    // later breaks down.
    let mut fallback: Option<IpmOutcome> = None;
    for iter in 0..=tol.max_iter {
        let f: Vec<DMatrix<f64>> = blocks
            .iter()
            .enumerate()
            .map(|(k, b)| &consts[k] + b.apply_linear(&it.z))
            .collect();
        let rd: Vec<DMatrix<f64>> = f.iter().zip(&it.s).map(|(f, s)| f - s).collect();
        let mut atx = DVector::zeros(q);
        for (k, b) in blocks.iter().enumerate() {
            atx += b.adjoint(&it.x[k]);
        }
        let rp = c - &atx;
        let pobj = c.dot(&it.z);
        let dobj = -consts.iter().zip(&it.x).map(|(cm, x)| frob_dot(cm, x)).sum::<f64>();
        let compl: f64 = it.x.iter().zip(&it.s).map(|(x, s)| frob_dot(x, s)).sum();
        let mu = compl / total_dim as f64;
        let pinf = rd.iter().map(|r| r.norm()).fold(0.0, f64::max);
        let dinf = rp.amax() / (1.0 + cnorm);
        let (po, dobj_off) = (pobj + offset, dobj + offset);
        let rel_gap = (po - dobj_off).abs().max(compl) / (1.0 + po.abs() + dobj_off.abs());
        last = (dobj, dinf, rel_gap);

        let outcome = |status, it: &Iterate, detail: String| IpmOutcome {
            status,
            z: it.z.clone(),
            iterations: iter,
            dual_objective: dobj,
            dual_residual: dinf,
            detail,
        };
        if !(mu.is_finite() && pobj.is_finite() && dobj.is_finite()) {
            return fallback.take().unwrap_or_else(|| outcome(SolveStatus::MaxIter, &it, "numerical breakdown".into()));
        }
        if pinf <= 0.1 * tol.tol_psd && dinf <= tol.tol_eq {
            if rel_gap <= 0.5 * tol.tol_gap {
                return outcome(SolveStatus::Optimal, &it, format!("converged in {iter} iterations"));
            }
            if rel_gap <= tol.tol_gap {
                fallback = Some(outcome(
                    SolveStatus::Optimal,
                    &it,
                    format!("stopped at the numerical floor after {iter} iterations (rel_gap {rel_gap:.1e})"),
                ));
            }
        }
        // X/τ certifies infeasibility once A*(X) is negligible against τ = −tr(CX).
        if dobj > 0.0 && atx.amax() <= TOL_CERT * dobj {
            return outcome(
                SolveStatus::Infeasible,
                &it,
                format!("infeasibility certificate with ratio {:.2e}", atx.amax() / dobj),
            );
        }
        // z/(−cᵀz) approaches a recession direction with A(dz) ⪰ 0.
        if pobj < 0.0 && (cscale + pinf) <= TOL_CERT * (-pobj) {
            return outcome(
                SolveStatus::Unbounded,
                &it,
                format!("recession direction with objective {pobj:.3e}"),
            );
        }
        if iter == tol.max_iter {
            break;
        }

        let mut chol_x = Vec::with_capacity(blocks.len());
        let mut chol_s = Vec::with_capacity(blocks.len());
        let mut w = Vec::with_capacity(blocks.len());
        for k in 0..blocks.len() {
            let (Some(cx), Some(cs)) = (Cholesky::new(it.x[k].clone()), Cholesky::new(it.s[k].clone())) else {
                return fallback
                    .take()
                    .unwrap_or_else(|| outcome(SolveStatus::MaxIter, &it, "iterate lost positive definiteness".into()));
            };
            w.push(symmetrize(&cs.inverse()));
            chol_x.push(cx);
            chol_s.push(cs);
        }
        let mut m = DMatrix::zeros(q, q);
        for (k, b) in blocks.iter().enumerate() {
            m += b.schur(&it.x[k], &w[k]);
        }
        let Some(factor) = Factor::new(&symmetrize(&m)) else {
            return fallback
                .take()
                .unwrap_or_else(|| outcome(SolveStatus::MaxIter, &it, "singular Schur complement".into()));
        };

        // Shared right-hand side: −c − A*(X R_d W).
        let mut base = -c.clone();
        let xrdw: Vec<Option<DMatrix<f64>>> = (0..blocks.len())
            .map(|k| (rd[k].amax() > 0.0).then(|| symmetrize(&(&it.x[k] * &rd[k] * &w[k]))))
            .collect();
        for (k, b) in blocks.iter().enumerate() {
            if let Some(h) = &xrdw[k] {
                base -= b.adjoint(h);
            }
        }

        let direction = |rhs: &DVector<f64>, sigma_mu: f64, corr: Option<&[DMatrix<f64>]>| {
            let dz = factor.solve(rhs);
            let mut dxs = Vec::with_capacity(blocks.len());
            let mut dss = Vec::with_capacity(blocks.len());
            for (k, b) in blocks.iter().enumerate() {
                let ds = &rd[k] + b.apply_linear(&dz);
                let mut dx = &w[k] * sigma_mu - &it.x[k] - symmetrize(&(&it.x[k] * &ds * &w[k]));
                if let Some(cr) = corr {
                    dx -= &cr[k];
                }
                dxs.push(dx);
                dss.push(ds);
            }
            if let Some(g) = &gram {
                let mut e = rp.clone();
                for (k, b) in blocks.iter().enumerate() {
                    e -= b.adjoint(&dxs[k]);
                }
                let v = g.solve(&e);
                for (k, b) in blocks.iter().enumerate() {
                    dxs[k] += b.apply_linear(&v);
                }
            }
            (dz, dxs, dss)
        };
        let steps = |dxs: &[DMatrix<f64>], dss: &[DMatrix<f64>]| {
            let ap = (0..blocks.len()).map(|k| max_step(&chol_x[k], &dxs[k])).fold(f64::INFINITY, f64::min);
            let ad = (0..blocks.len()).map(|k| max_step(&chol_s[k], &dss[k])).fold(f64::INFINITY, f64::min);
            (ap, ad)
        };

        // Predictor.
        let (_, dxa, dsa) = direction(&base, 0.0, None);
        let (ap, ad) = steps(&dxa, &dsa);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mu_aff = (0..blocks.len())
            .map(|k| frob_dot(&(&it.x[k] + &dxa[k] * ap), &(&it.s[k] + &dsa[k] * ad)))
            .sum::<f64>()
            / total_dim as f64;
        let sigma = (mu_aff.max(0.0) / mu).powi(3).min(1.0);

        // Corrector.
        let corr: Vec<DMatrix<f64>> = (0..blocks.len())
            .map(|k| symmetrize(&(&dxa[k] * &dsa[k] * &w[k])))
            .collect();
        let mut rhs = base.clone();
        for (k, b) in blocks.iter().enumerate() {
            rhs += b.adjoint(&(&w[k] * (sigma * mu)));
            rhs -= b.adjoint(&corr[k]);
        }
        let (dz, dx, ds) = direction(&rhs, sigma * mu, Some(&corr));
        let (ap, ad) = steps(&dx, &ds);
        let ap = (step_factor * ap).min(1.0);
        let ad = (step_factor * ad).min(1.0);
        step_factor = (0.9 + 0.09 * ap.min(ad)).min(0.99);

        for k in 0..blocks.len() {
            it.x[k] = symmetrize(&(&it.x[k] + &dx[k] * ap));
            it.s[k] = symmetrize(&(&it.s[k] + &ds[k] * ad));
        }
        it.z += dz * ad;

        if ap.min(ad) < 1e-9 {
            stalls += 1;
            if stalls >= 3 {
                if let Some(f) = fallback.take() {
                    return f;
                }
                return IpmOutcome {
                    status: SolveStatus::MaxIter,
                    z: it.z,
                    iterations: iter + 1,
                    dual_objective: dobj,
                    dual_residual: dinf,
                    detail: format!("stalled (step lengths {ap:.1e}, {ad:.1e}; rel_gap {rel_gap:.1e})"),
                };
            }
        } else {
            stalls = 0;
        }
    }
    if let Some(f) = fallback {
        return f;
    }
    IpmOutcome {
        status: SolveStatus::MaxIter,
        z: it.z,
        iterations: tol.max_iter,
        dual_objective: last.0,
        dual_residual: last.1,
        detail: format!("iteration limit reached (rel_gap {:.1e})", last.2),
    }
}
