use nalgebra::{DMatrix, DVector};

use super::AffineMatrixMap;
use crate::error::{check_shape, Error, Result};
use crate::matrix::symmetrize;

/// An LMI block with explicitly stored symmetric coefficient matrices.
#[derive(Debug, Clone)]
pub struct DenseLmi {
    dim: usize,
    num_vars: usize,
    constant: DMatrix<f64>,
    /// `(variable, F_i)`, one entry per variable, sorted.
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl DenseLmi {
    pub fn new(
        num_vars: usize,
        constant: DMatrix<f64>,
        terms: Vec<(usize, DMatrix<f64>)>,
    ) -> Result<Self> {
        let dim = constant.nrows();
        check_shape("LMI constant", (dim, dim), constant.shape())?;
        let mut merged: Vec<(usize, DMatrix<f64>)> = Vec::new();
        for (v, f) in terms {
            check_shape("LMI coefficient", (dim, dim), f.shape())?;
            if v >= num_vars {
                return Err(Error::validation(format!("LMI references variable {v} of {num_vars}")));
            }
            match merged.iter_mut().find(|(u, _)| *u == v) {
                Some((_, g)) => *g += f,
                None => merged.push((v, f)),
            }
        }
        merged.sort_by_key(|(v, _)| *v);
        for (_, f) in merged.iter_mut() {
            *f = symmetrize(f);
        }
        Ok(DenseLmi {
            dim,
            num_vars,
            constant: symmetrize(&constant),
            terms: merged,
        })
    }
}

impl AffineMatrixMap for DenseLmi {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_vars(&self) -> usize {
        self.num_vars
    }

    fn constant(&self) -> DMatrix<f64> {
        self.constant.clone()
    }

    fn apply_linear(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (v, f) in &self.terms {
            if y[*v] != 0.0 {
                out += f * y[*v];
            }
        }
        out
    }

    fn adjoint(&self, h: &DMatrix<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_vars);
        for (v, f) in &self.terms {
            out[*v] = f.dot(h);
        }
        out
    }

    fn schur(&self, x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        // M_ij = ⟨F_j, X F_i W⟩.
        let mut m = DMatrix::zeros(self.num_vars, self.num_vars);
        for (a, (i, fi)) in self.terms.iter().enumerate() {
            let g = x * fi * w;
            for (j, fj) in &self.terms[a..] {
                let v = fj.dot(&g);
                m[(*i, *j)] = v;
                m[(*j, *i)] = v;
            }
        }
        m
    }

    fn coefficient(&self, i: usize) -> DMatrix<f64> {
        self.terms
            .iter()
            .find(|(v, _)| *v == i)
            .map_or_else(|| DMatrix::zeros(self.dim, self.dim), |(_, f)| f.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schur_matches_trace_formula() {
        let f1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 0.0]);
        let f2 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 3.0]);
        let lmi = DenseLmi::new(2, DMatrix::zeros(2, 2), vec![(0, f1.clone()), (1, f2.clone())]).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let w = DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 3.0]);
        let m = lmi.schur(&x, &w);
        let fs = [f1, f2];
        for i in 0..2 {
            for j in 0..2 {
                let t = (&fs[i] * &x * &fs[j] * &w).trace();
                assert!((m[(i, j)] - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn merges_repeated_variables() {
        let lmi = DenseLmi::new(
            1,
            DMatrix::zeros(1, 1),
            vec![(0, DMatrix::identity(1, 1)), (0, DMatrix::identity(1, 1))],
        )
        .unwrap();
        assert_eq!(lmi.coefficient(0)[(0, 0)], 2.0);
    }
}
