//! Binary information patterns and the algebra used to reason about them:
//! structure extraction, membership, quadratic invariance (QI), the nearest
//! QI superset and the sparsity-invariance state pattern `V_x`.
//!
//! Boolean products are evaluated over the `{0, 1}` semiring (OR of ANDs),
//! so no counts are ever accumulated.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};

/// Spatio-temporal block grid: `T × T` blocks of size `row_block × col_block`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMeta {
    pub row_block: usize,
    pub col_block: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
}

#[derive(Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
    pub block_meta: Option<BlockMeta>,
}

impl fmt::Debug for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SparsityPattern {}x{}", self.rows, self.cols)?;
        f.write_str(&self.to_text())
    }
}

#[derive(Serialize, Deserialize)]
struct RawPattern {
    rows: usize,
    cols: usize,
    bits: Vec<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block_meta: Option<BlockMeta>,
}

impl Serialize for SparsityPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawPattern {
            rows: self.rows,
            cols: self.cols,
            bits: (0..self.rows)
                .map(|i| (0..self.cols).map(|j| self.get(i, j) as u8).collect())
                .collect(),
            block_meta: self.block_meta,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SparsityPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawPattern::deserialize(d)?;
        let mut p = SparsityPattern::from_bit_rows(&raw.bits).map_err(serde::de::Error::custom)?;
        if p.rows != raw.rows || p.cols != raw.cols {
            return Err(serde::de::Error::custom(format!(
                "declared shape {}x{} does not match bits {}x{}",
                raw.rows, raw.cols, p.rows, p.cols
            )));
        }
        p.block_meta = raw.block_meta;
        Ok(p)
    }
}

impl SparsityPattern {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparsityPattern {
            rows,
            cols,
            bits: vec![false; rows * cols],
            block_meta: None,
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        SparsityPattern {
            rows,
            cols,
            bits: vec![true; rows * cols],
            block_meta: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut p = Self::zeros(n, n);
        for i in 0..n {
            p.set(i, i, true);
        }
        p
    }

    /// Builds a pattern from rows of `0`/`1` values.
    pub fn from_bit_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut p = Self::zeros(nrows, ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::validation("ragged pattern rows"));
            }
            for (j, &v) in r.iter().enumerate() {
                match v {
                    0 => {}
                    1 => p.set(i, j, true),
                    other => {
                        return Err(Error::validation(format!(
                            "pattern entries must be 0 or 1, found {other}"
                        )))
                    }
                }
            }
        }
        Ok(p)
    }

    /// Parses the compact text form: one line per row of `0`/`1` characters.
    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<Vec<u8>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.chars()
                    .filter(|c| !c.is_whitespace())
                    .map(|c| match c {
                        '0' => Ok(0),
                        '1' => Ok(1),
                        other => Err(Error::validation(format!("invalid pattern character '{other}'"))),
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Self::from_bit_rows(&rows)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.rows * (self.cols + 1));
        for i in 0..self.rows {
            for j in 0..self.cols {
                s.push(if self.get(i, j) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.cols + j] = v;
    }

    pub fn with_block_meta(mut self, meta: BlockMeta) -> Self {
        self.block_meta = Some(meta);
        self
    }

    /// Number of ones.
    pub fn card(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn ones_iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k / cols, k % cols))
    }

    /// Partial order `self ≤ other` (entrywise).
    pub fn is_subset_of(&self, other: &SparsityPattern) -> bool {
        self.shape() == other.shape() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn union(&self, other: &SparsityPattern) -> Result<SparsityPattern> {
        check_shape("pattern union", self.shape(), other.shape())?;
        let mut out = self.clone();
        for (a, &b) in out.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(out)
    }

    pub fn transpose(&self) -> SparsityPattern {
        let mut t = SparsityPattern::zeros(self.cols, self.rows);
        for (i, j) in self.ones_iter() {
            t.set(j, i, true);
        }
        t.block_meta = self.block_meta.map(|b| BlockMeta {
            row_block: b.col_block,
            col_block: b.row_block,
            horizon: b.horizon,
        });
        t
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &SparsityPattern) -> SparsityPattern {
        let (r2, c2) = other.shape();
        let mut out = SparsityPattern::zeros(self.rows * r2, self.cols * c2);
        for (i, j) in self.ones_iter() {
            for (k, l) in other.ones_iter() {
                out.set(i * r2 + k, j * c2 + l, true);
            }
        }
        out
    }

    /// All-ones lower-triangular `T × T` pattern.
    pub fn tril(horizon: usize) -> SparsityPattern {
        let mut p = SparsityPattern::zeros(horizon, horizon);
        for i in 0..horizon {
            for j in 0..=i {
                p.set(i, j, true);
            }
        }
        p
    }

    /// `Tril(T) ⊗ block`, tagged with the block grid.
    pub fn tril_kron(horizon: usize, block: &SparsityPattern) -> SparsityPattern {
        Self::tril(horizon).kron(block).with_block_meta(BlockMeta {
            row_block: block.rows,
            col_block: block.cols,
            horizon,
        })
    }

    /// Full lower-block-triangular (causal) pattern for the given grid.
    pub fn causal(meta: BlockMeta) -> SparsityPattern {
        Self::tril_kron(meta.horizon, &SparsityPattern::ones(meta.row_block, meta.col_block))
    }

    /// Checks lower block-triangularity against `block_meta` (vacuously true without it).
    pub fn is_causal(&self) -> bool {
        match self.block_meta {
            None => true,
            Some(b) => self
                .ones_iter()
                .all(|(i, j)| j / b.col_block <= i / b.row_block),
        }
    }

    /// Boolean product over the `{0, 1}` semiring.
    pub fn bool_mul(&self, other: &SparsityPattern) -> Result<SparsityPattern> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                context: "boolean product",
                expected: (self.cols, other.cols),
                actual: other.shape(),
            });
        }
        let words = other.cols.div_ceil(64);
        let packed: Vec<u64> = {
            let mut w = vec![0u64; other.rows * words];
            for (i, j) in other.ones_iter() {
                w[i * words + j / 64] |= 1u64 << (j % 64);
            }
            w
        };
        let mut acc = vec![0u64; words];
        let mut out = SparsityPattern::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            acc.iter_mut().for_each(|a| *a = 0);
            for j in 0..self.cols {
                if self.get(i, j) {
                    let row = &packed[j * words..(j + 1) * words];
                    for (a, r) in acc.iter_mut().zip(row) {
                        *a |= *r;
                    }
                }
            }
            for (wi, &word) in acc.iter().enumerate() {
                let mut w = word;
                while w != 0 {
                    let bit = w.trailing_zeros() as usize;
                    out.set(i, wi * 64 + bit, true);
                    w &= w - 1;
                }
            }
        }
        Ok(out)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| if self.get(i, j) { 1.0 } else { 0.0 })
    }
}

/// `Struct(Z)`: 1 wherever `Z` is not exactly zero.
pub fn struct_of(z: &DMatrix<f64>) -> SparsityPattern {
    let mut p = SparsityPattern::zeros(z.nrows(), z.ncols());
    for i in 0..z.nrows() {
        for j in 0..z.ncols() {
            if z[(i, j)] != 0.0 {
                p.set(i, j, true);
            }
        }
    }
    p
}

/// `Y ∈ Sparse(X)`: `Y` vanishes exactly wherever `X` is zero.
pub fn is_member(y: &DMatrix<f64>, x: &SparsityPattern) -> Result<bool> {
    check_shape("membership", x.shape(), y.shape())?;
    Ok((0..y.nrows()).all(|i| (0..y.ncols()).all(|j| x.get(i, j) || y[(i, j)] == 0.0)))
}

/// Largest entry of a matrix outside a pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Leakage {
    pub max_abs: f64,
    pub position: Option<(usize, usize)>,
}

impl Leakage {
    pub const DEFAULT_REPORT_THRESHOLD: f64 = 1e-9;

    pub fn exceeds(&self, threshold: f64) -> bool {
        self.max_abs > threshold
    }
}

/// Diagnostic for solver outputs: the max-magnitude entry of `y` outside `x`.
pub fn leakage(y: &DMatrix<f64>, x: &SparsityPattern) -> Result<Leakage> {
    check_shape("leakage", x.shape(), y.shape())?;
    let mut out = Leakage {
        max_abs: 0.0,
        position: None,
    };
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            let v = y[(i, j)].abs();
            if !x.get(i, j) && v > out.max_abs {
                out = Leakage {
                    max_abs: v,
                    position: Some((i, j)),
                };
            }
        }
    }
    Ok(out)
}

fn check_qi_shapes(s: &SparsityPattern, delta: &SparsityPattern) -> Result<()> {
    check_shape("QI test (Δ must be the transpose shape of S)", (s.cols, s.rows), delta.shape())
}

/// First entry where `S·Δ·S` leaves `S`, if any.
pub fn qi_violation(s: &SparsityPattern, delta: &SparsityPattern) -> Result<Option<(usize, usize)>> {
    check_qi_shapes(s, delta)?;
    let sds = s.bool_mul(delta)?.bool_mul(s)?;
    let first = sds.ones_iter().find(|&(i, j)| !s.get(i, j));
    Ok(first)
}

/// Binary quadratic-invariance test: `S·Δ·S ≤ S`.
pub fn is_qi(s: &SparsityPattern, delta: &SparsityPattern) -> Result<bool> {
    Ok(qi_violation(s, delta)?.is_none())
}

/// Smallest QI pattern containing `S`: the fixpoint of `S ← S ∨ S·Δ·S`.
///
/// Every QI superset `S*` of `S` satisfies `S·Δ·S ≤ S*·Δ·S* ≤ S*`, so each
/// closure step only adds entries that every QI superset must contain; the
/// fixpoint is therefore the unique cardinality-minimal QI superset.
pub fn nearest_qi_superset(s: &SparsityPattern, delta: &SparsityPattern) -> Result<SparsityPattern> {
    check_qi_shapes(s, delta)?;
    let mut cur = s.clone();
    loop {
        let next = cur.union(&cur.bool_mul(delta)?.bool_mul(&cur)?)?;
        if next == cur {
            cur.block_meta = s.block_meta;
            return Ok(cur);
        }
        cur = next;
    }
}

/// State-map pattern `V_x` (nT × nT) guaranteeing `Φ_uΦ_x⁻¹ ∈ Sparse(S)`:
/// start from all ones and clear `(j, k)` whenever some row `i` of `S`
/// has `S[i,k] = 0` and `S[i,j] = 1`.
pub fn generate_vx(s: &SparsityPattern) -> SparsityPattern {
    let nt = s.cols;
    let mut v = SparsityPattern::ones(nt, nt);
    for i in 0..s.rows {
        let ones: Vec<usize> = (0..nt).filter(|&j| s.get(i, j)).collect();
        for k in (0..nt).filter(|&k| !s.get(i, k)) {
            for &j in &ones {
                v.set(j, k, false);
            }
        }
    }
    if let Some(b) = s.block_meta {
        v.block_meta = Some(BlockMeta {
            row_block: b.col_block,
            col_block: b.col_block,
            horizon: b.horizon,
        });
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pat(rows: &[&[u8]]) -> SparsityPattern {
        SparsityPattern::from_bit_rows(rows).unwrap()
    }

    #[test]
    fn struct_of_examples() {
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 2.5, -1.0, 0.0]);
        assert_eq!(struct_of(&z), pat(&[&[0, 1], &[1, 0]]));
        assert_eq!(struct_of(&DMatrix::zeros(3, 2)), SparsityPattern::zeros(3, 2));
        assert_eq!(struct_of(&DMatrix::identity(3, 3)), SparsityPattern::identity(3));
        let tiny = DMatrix::from_row_slice(1, 1, &[f64::MIN_POSITIVE / 4.0]);
        assert_eq!(struct_of(&tiny).card(), 1);
    }

    #[test]
    fn membership_is_exact() {
        let x = SparsityPattern::identity(2);
        assert!(is_member(&DMatrix::zeros(2, 2), &x).unwrap());
        let mut y = DMatrix::zeros(2, 2);
        y[(0, 1)] = 1e-300;
        assert!(!is_member(&y, &x).unwrap());
        let d = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 4.0]);
        assert!(is_member(&d, &x).unwrap());
        assert!(is_member(&DMatrix::zeros(3, 2), &x).is_err());
    }

    #[test]
    fn leakage_reports_largest_outside_entry() {
        let x = SparsityPattern::identity(2);
        let y = DMatrix::from_row_slice(2, 2, &[5.0, 1e-12, -3e-10, 1.0]);
        let l = leakage(&y, &x).unwrap();
        assert_eq!(l.position, Some((1, 0)));
        assert!(!l.exceeds(Leakage::DEFAULT_REPORT_THRESHOLD));
    }

    #[test]
    fn text_and_json_forms() {
        let p = pat(&[&[1, 0, 1], &[0, 1, 1]]);
        assert_eq!(p.to_text(), "101\n011\n");
        assert_eq!(SparsityPattern::from_text(&p.to_text()).unwrap(), p);
        let j = p.to_json().unwrap();
        assert_eq!(j, r#"{"rows":2,"cols":3,"bits":[[1,0,1],[0,1,1]]}"#);
        assert_eq!(SparsityPattern::from_json(&j).unwrap(), p);
        assert!(SparsityPattern::from_text("102").is_err());
        assert!(SparsityPattern::from_json(r#"{"rows":1,"cols":1,"bits":[[2]]}"#).is_err());
    }

    #[test]
    fn qi_examples() {
        let delta = SparsityPattern::identity(3);
        let s = pat(&[&[1, 0, 0], &[1, 1, 0], &[0, 0, 1]]);
        let s_hat = pat(&[&[1, 0, 0], &[1, 1, 0], &[0, 1, 1]]);
        assert!(is_qi(&s, &delta).unwrap());
        assert!(!is_qi(&s_hat, &delta).unwrap());
        assert_eq!(qi_violation(&s_hat, &delta).unwrap(), Some((2, 0)));
        assert!(is_qi(&SparsityPattern::ones(3, 3), &delta).unwrap());
    }

    #[test]
    fn closure_examples() {
        let delta = SparsityPattern::identity(3);
        let s_hat = pat(&[&[1, 0, 0], &[1, 1, 0], &[0, 1, 1]]);
        assert_eq!(
            nearest_qi_superset(&s_hat, &delta).unwrap(),
            pat(&[&[1, 0, 0], &[1, 1, 0], &[1, 1, 1]])
        );
        let s = pat(&[&[1, 0, 0], &[1, 1, 0], &[0, 0, 1]]);
        assert_eq!(nearest_qi_superset(&s, &delta).unwrap(), s);
        assert_eq!(nearest_qi_superset(&s_hat, &SparsityPattern::zeros(3, 3)).unwrap(), s_hat);
    }

    #[test]
    fn vx_examples() {
        let s = pat(&[&[1, 0, 0], &[1, 1, 0], &[0, 0, 1]]);
        assert_eq!(generate_vx(&s), pat(&[&[1, 0, 0], &[1, 1, 0], &[0, 0, 1]]));
        let s_hat = pat(&[&[1, 0, 0], &[1, 1, 0], &[0, 1, 1]]);
        assert_eq!(generate_vx(&s_hat), pat(&[&[1, 0, 0], &[0, 1, 0], &[0, 1, 1]]));
        assert_eq!(generate_vx(&SparsityPattern::ones(2, 4)), SparsityPattern::ones(4, 4));
    }

    #[test]
    fn bool_mul_matches_naive_on_wide_patterns() {
        let mut a = SparsityPattern::zeros(3, 70);
        let mut b = SparsityPattern::zeros(70, 130);
        a.set(0, 69, true);
        a.set(2, 3, true);
        b.set(69, 129, true);
        b.set(3, 64, true);
        b.set(3, 0, true);
        let c = a.bool_mul(&b).unwrap();
        assert_eq!(c.ones_iter().collect::<Vec<_>>(), vec![(0, 129), (2, 0), (2, 64)]);
    }
}
