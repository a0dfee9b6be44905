//! Structured LMI over the closed-loop parameterization.
//!
//! The block is
//!
//! ```text
//! F(y, t) = [ (α₀ + α_t t) I_r     M(y)         ]
//!           [ M(y)ᵀ                P + β t I_c  ]
//! M(y)    = M₀ + L J(y) R
//! ```
//!
//! with `M₀ = C^{1/2}[I; 0]Γ⁻¹`, `L = C^{1/2}[G; I]`, `R = Γ⁻¹` and
//! `J(y) = Σ y_i J_i`, each `J_i` a sum of unit matrices at the `Ψ`
//! positions of variable `i`. The last variable is `t`. The Schur kernel
//! `tr(F_i X F_j W)` reduces to four index-gathered products of small
//! dense matrices, so `F_i` is never materialized.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::conic::AffineMatrixMap;
use crate::model::{BlockLift, CostWeights};
use crate::sls::Parameterization;

#[derive(Debug, Clone)]
pub struct ClosedLoopLmi {
    rows: usize,
    cols: usize,
    l: DMatrix<f64>,
    r: DMatrix<f64>,
    m0: DMatrix<f64>,
    p: DMatrix<f64>,
    alpha0: f64,
    alpha_t: f64,
    beta: f64,
    entries: Arc<Vec<Vec<(usize, usize)>>>,
}

/// `C^{1/2}[G; I]` and `C^{1/2}[I; 0]Γ⁻¹`.
pub(crate) fn weighted_factors(lift: &BlockLift, cost: &CostWeights) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nt, mt) = (lift.nt(), lift.mt());
    let mut gi = DMatrix::zeros(nt + mt, mt);
    gi.rows_mut(0, nt).copy_from(&lift.g);
    gi.rows_mut(nt, mt).fill_with_identity();
    let mut top = DMatrix::zeros(nt + mt, nt);
    top.rows_mut(0, nt).copy_from(&lift.gamma_inv);
    (&cost.c_half * gi, &cost.c_half * top)
}

impl ClosedLoopLmi {
    /// `[[I, M(y)], [M(y)ᵀ, P + t I]]`, the regret epigraph with `t = λ`.
    pub fn regret(lift: &BlockLift, cost: &CostWeights, param: &Parameterization, p: DMatrix<f64>) -> Self {
        Self::build(lift, cost, param, p, 1.0, 0.0, 1.0)
    }

    /// `[[t I, M(y)], [M(y)ᵀ, t I]]`, the spectral-norm epigraph with `t = γ`.
    pub fn spectral(lift: &BlockLift, cost: &CostWeights, param: &Parameterization) -> Self {
        let c = lift.nt();
        Self::build(lift, cost, param, DMatrix::zeros(c, c), 0.0, 1.0, 1.0)
    }

    fn build(
        lift: &BlockLift,
        cost: &CostWeights,
        param: &Parameterization,
        p: DMatrix<f64>,
        alpha0: f64,
        alpha_t: f64,
        beta: f64,
    ) -> Self {
        let (l, top) = weighted_factors(lift, cost);
        let m0 = &top;
        ClosedLoopLmi {
            rows: l.nrows(),
            cols: lift.nt(),
            l,
            r: lift.gamma_inv.clone(),
            m0: m0.clone(),
            p: crate::matrix::symmetrize(&p),
            alpha0,
            alpha_t,
            beta,
            entries: Arc::new(param.entries.clone()),
        }
    }

    fn num_psi(&self) -> usize {
        self.entries.len()
    }

    /// `Σ_{(a,b) ∈ idx_i} K[a, b]` for every variable.
    fn gather(&self, k: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.num_psi(),
            self.entries.iter().map(|idx| idx.iter().map(|&(a, b)| k[(a, b)]).sum()),
        )
    }

    fn j_of(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.l.ncols(), self.cols);
        for (v, idx) in self.entries.iter().enumerate() {
            if y[v] != 0.0 {
                for &(a, b) in idx {
                    j[(a, b)] += y[v];
                }
            }
        }
        j
    }

    fn split(&self, h: &DMatrix<f64>) -> [DMatrix<f64>; 4] {
        let (r, c) = (self.rows, self.cols);
        [
            h.view((0, 0), (r, r)).into_owned(),
            h.view((0, r), (r, c)).into_owned(),
            h.view((r, 0), (c, r)).into_owned(),
            h.view((r, r), (c, c)).into_owned(),
        ]
    }

    /// `tr(F_t H)` for the scalar variable.
    fn t_adjoint(&self, h: &DMatrix<f64>) -> f64 {
        let (r, c) = (self.rows, self.cols);
        self.alpha_t * h.view((0, 0), (r, r)).trace() + self.beta * h.view((r, r), (c, c)).trace()
    }
}

impl AffineMatrixMap for ClosedLoopLmi {
    fn dim(&self) -> usize {
        self.rows + self.cols
    }

    fn num_vars(&self) -> usize {
        self.num_psi() + 1
    }

    fn constant(&self) -> DMatrix<f64> {
        let (r, c) = (self.rows, self.cols);
        let mut f = DMatrix::zeros(r + c, r + c);
        for i in 0..r {
            f[(i, i)] = self.alpha0;
        }
        f.view_mut((0, r), (r, c)).copy_from(&self.m0);
        f.view_mut((r, 0), (c, r)).copy_from(&self.m0.transpose());
        f.view_mut((r, r), (c, c)).copy_from(&self.p);
        f
    }

    fn apply_linear(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let (r, c) = (self.rows, self.cols);
        let t = y[self.num_psi()];
        let e = &self.l * self.j_of(y) * &self.r;
        let mut f = DMatrix::zeros(r + c, r + c);
        for i in 0..r {
            f[(i, i)] = self.alpha_t * t;
        }
        for i in r..r + c {
            f[(i, i)] = self.beta * t;
        }
        f.view_mut((0, r), (r, c)).copy_from(&e);
        f.view_mut((r, 0), (c, r)).copy_from(&e.transpose());
        f
    }

    fn adjoint(&self, h: &DMatrix<f64>) -> DVector<f64> {
        let [_, h12, h21, _] = self.split(h);
        let k = self.l.tr_mul(&(h12 + h21.transpose())) * self.r.transpose();
        let mut out = DVector::zeros(self.num_vars());
        out.rows_mut(0, self.num_psi()).copy_from(&self.gather(&k));
        out[self.num_psi()] = self.t_adjoint(h);
        out
    }

    fn schur(&self, x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.num_psi();
        let [x11, x12, x21, x22] = self.split(x);
        let [w11, w12, w21, w22] = self.split(w);
        let (l, r) = (&self.l, &self.r);
        let p1 = r * &x21 * l;
        let q1 = r * &w21 * l;
        let p2 = r * &x22 * r.transpose();
        let q2 = l.tr_mul(&(&w11 * l));
        let p3 = l.tr_mul(&(&x11 * l));
        let q3 = r * &w22 * r.transpose();
        let p4 = l.tr_mul(&x12) * r.transpose();
        let q4 = l.tr_mul(&w12) * r.transpose();

        let mut m = DMatrix::zeros(p + 1, p + 1);
        let entries = &self.entries;
        let rows: Vec<Vec<f64>> = {
            use rayon::prelude::*;
            (0..p)
                .into_par_iter()
                .map(|i| {
                    let mut row = vec![0.0; p - i];
                    for (jj, idx_j) in entries[i..].iter().enumerate() {
                        let mut s = 0.0;
                        for &(a, b) in &entries[i] {
                            for &(c, d) in idx_j {
                                s += p1[(b, c)] * q1[(d, a)]
                                    + p2[(b, d)] * q2[(c, a)]
                                    + p3[(a, c)] * q3[(d, b)]
                                    + p4[(a, d)] * q4[(c, b)];
                            }
                        }
                        row[jj] = s;
                    }
                    row
                })
                .collect()
        };
        for (i, row) in rows.into_iter().enumerate() {
            for (jj, v) in row.into_iter().enumerate() {
                m[(i, i + jj)] = v;
                m[(i + jj, i)] = v;
            }
        }

        // Cross terms with t: M_{t,j} = ⟨F_j, X F_t W⟩.
        let mut ftw = w.clone();
        {
            let rr = self.rows;
            let c = self.cols;
            ftw.rows_mut(0, rr).scale_mut(self.alpha_t);
            ftw.rows_mut(rr, c).scale_mut(self.beta);
        }
        let h = x * ftw;
        let a = self.adjoint(&h);
        for j in 0..p {
            m[(p, j)] = a[j];
            m[(j, p)] = a[j];
        }
        m[(p, p)] = a[p];
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::DenseLmi;
    use crate::model::{build_block_lift, HorizonSystem};
    use crate::sls::{causal_pattern, Restriction};

    fn spd(d: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        let a = DMatrix::from_fn(d, d, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    fn check(lmi: &ClosedLoopLmi) {
        let terms: Vec<(usize, DMatrix<f64>)> = (0..lmi.num_vars()).map(|i| (i, lmi.coefficient(i))).collect();
        let dense = DenseLmi::new(lmi.num_vars(), lmi.constant(), terms).unwrap();
        let d = lmi.dim();
        let (x, w) = (spd(d, 3), spd(d, 7));
        let (ms, md) = (lmi.schur(&x, &w), dense.schur(&x, &w));
        assert!((&ms - &md).amax() < 1e-9 * (1.0 + md.amax()), "schur mismatch");
        let (as_, ad) = (lmi.adjoint(&x), dense.adjoint(&x));
        assert!((&as_ - &ad).amax() < 1e-10 * (1.0 + ad.amax()));
        let y = DVector::from_fn(lmi.num_vars(), |i, _| (i as f64 * 0.37).sin());
        assert!((lmi.apply_linear(&y) - dense.apply_linear(&y)).amax() < 1e-12);
    }

    #[test]
    fn structured_kernels_match_dense() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 1.1]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let lift = build_block_lift(&HorizonSystem::lti(a, b, 3).unwrap()).unwrap();
        let cost = CostWeights::identity(lift.stacked_rows());
        for restriction in [Restriction::None, Restriction::Toeplitz] {
            let param = Parameterization::new(&lift, &causal_pattern(&lift), restriction).unwrap();
            check(&ClosedLoopLmi::spectral(&lift, &cost, &param));
            let p = spd(lift.nt(), 11);
            check(&ClosedLoopLmi::regret(&lift, &cost, &param, p));
        }
    }
}
