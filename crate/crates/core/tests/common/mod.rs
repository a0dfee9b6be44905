//! Test-side reference implementations. Nothing here goes through the
//! block lift or the conic solver, so agreement with the library is an
//! independent check.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spregret_core::model::HorizonSystem;
use spregret_core::SparsityPattern;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random LTI plant with spectral radius kept moderate.
pub fn random_plant(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize) -> HorizonSystem {
    let a = gaussian(rng, n, n) * (0.9 / (n as f64).sqrt());
    let b = gaussian(rng, n, m);
    HorizonSystem::lti(a, b, horizon).unwrap()
}

/// Random plant whose matrices change every step.
pub fn random_ltv_plant(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize) -> HorizonSystem {
    let a_seq = (0..horizon).map(|_| gaussian(rng, n, n) * (0.9 / (n as f64).sqrt())).collect();
    let b_seq = (0..horizon).map(|_| gaussian(rng, n, m)).collect();
    HorizonSystem::new(a_seq, b_seq).unwrap()
}

/// Random causal gain (`u_t` reads `x_0..x_t`), entries scaled by `scale`.
pub fn random_causal_gain(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize, scale: f64) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(m * horizon, n * horizon);
    for t in 0..horizon {
        for s in 0..=t {
            for i in 0..m {
                for j in 0..n {
                    k[(t * m + i, s * n + j)] = scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    k
}

/// Random causal pattern, each causal entry kept with probability `p`.
pub fn random_causal_pattern(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize, p: f64) -> SparsityPattern {
    let mut s = SparsityPattern::zeros(m * horizon, n * horizon);
    for t in 0..horizon {
        for r in 0..=t {
            for i in 0..m {
                for j in 0..n {
                    if rng.random::<f64>() < p {
                        s.set(t * m + i, r * n + j, true);
                    }
                }
            }
        }
    }
    s
}

pub fn random_pattern(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> SparsityPattern {
    let mut s = SparsityPattern::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            s.set(i, j, rng.random::<f64>() < p);
        }
    }
    s
}

/// Simulates `x_{t+1} = A_t x_t + B_t u_t + w_t`, `u_t = Σ_{s≤t} K_{t,s} x_s`
/// with `δ = [x_0; w_0; …; w_{T−2}]` and returns `(x, u)` stacked over time.
pub fn rollout(sys: &HorizonSystem, k: &DMatrix<f64>, delta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let (n, m, horizon) = (sys.state_dim, sys.input_dim, sys.horizon);
    let mut x = DVector::zeros(n * horizon);
    let mut u = DVector::zeros(m * horizon);
    for t in 0..horizon {
        if t == 0 {
            x.rows_mut(0, n).copy_from(&delta.rows(0, n));
        } else {
            let prev = &sys.a_seq[t - 1] * x.rows((t - 1) * n, n) + &sys.b_seq[t - 1] * u.rows((t - 1) * m, m)
                + delta.rows(t * n, n);
            x.rows_mut(t * n, n).copy_from(&prev);
        }
        let mut ut = DVector::zeros(m);
        for s in 0..=t {
            ut += k.view((t * m, s * n), (m, n)) * x.rows(s * n, n);
        }
        u.rows_mut(t * m, m).copy_from(&ut);
    }
    (x, u)
}

/// `[x; u]ᵀ C [x; u]` from a rollout.
pub fn rollout_cost(sys: &HorizonSystem, k: &DMatrix<f64>, delta: &DVector<f64>, c: &DMatrix<f64>) -> f64 {
    let (x, u) = rollout(sys, k, delta);
    let z = DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied());
    z.dot(&(c * &z))
}

/// Closed-loop responses assembled column by column from unit disturbances.
pub fn rollout_maps(sys: &HorizonSystem, k: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m, horizon) = (sys.state_dim, sys.input_dim, sys.horizon);
    let nt = n * horizon;
    let mut px = DMatrix::zeros(nt, nt);
    let mut pu = DMatrix::zeros(m * horizon, nt);
    for j in 0..nt {
        let mut e = DVector::zeros(nt);
        e[j] = 1.0;
        let (x, u) = rollout(sys, k, &e);
        px.set_column(j, &x);
        pu.set_column(j, &u);
    }
    (px, pu)
}

/// Finite-horizon LQR with unit weights and unit disturbance covariance:
/// `Σ_t tr(P_t)` from the backward Riccati recursion. The last input
/// affects nothing, so `P_{T−1} = I`.
pub fn riccati_h2(sys: &HorizonSystem) -> f64 {
    let (n, m) = (sys.state_dim, sys.input_dim);
    let eye_n = DMatrix::<f64>::identity(n, n);
    let eye_m = DMatrix::<f64>::identity(m, m);
    let mut p = eye_n.clone();
    let mut total = p.trace();
    for t in (0..sys.horizon - 1).rev() {
        let (a, b) = (&sys.a_seq[t], &sys.b_seq[t]);
        let s = &eye_m + b.transpose() * &p * b;
        let gain = s.try_inverse().unwrap() * b.transpose() * &p * a;
        p = &eye_n + a.transpose() * &p * a - a.transpose() * &p * b * gain;
        total += p.trace();
    }
    total
}

/// `S·Δ·S ≤ S` by direct triple loops.
pub fn naive_is_qi(s: &SparsityPattern, delta: &SparsityPattern) -> bool {
    let (rows, cols) = s.shape();
    for i in 0..rows {
        for j in 0..cols {
            if s.get(i, j) {
                continue;
            }
            for a in 0..cols {
                if !s.get(i, a) {
                    continue;
                }
                for b in 0..rows {
                    if delta.get(a, b) && s.get(b, j) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Definition-level QI check: `K G K ∈ Sparse(S)` for random `K ∈ Sparse(S)`
/// and random `G ∈ Sparse(Δ)` with generic entries.
pub fn randomized_qi(s: &SparsityPattern, delta: &SparsityPattern, rng: &mut ChaCha8Rng, trials: usize) -> bool {
    let (rows, cols) = s.shape();
    for _ in 0..trials {
        let k = DMatrix::from_fn(rows, cols, |i, j| {
            if s.get(i, j) {
                1.0 + rng.random::<f64>()
            } else {
                0.0
            }
        });
        let g = DMatrix::from_fn(cols, rows, |i, j| {
            if delta.get(i, j) {
                rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            }
        });
        let kgk = &k * &g * &k;
        let scale = 1.0 + kgk.amax();
        for i in 0..rows {
            for j in 0..cols {
                if !s.get(i, j) && kgk[(i, j)].abs() > 1e-12 * scale {
                    return false;
                }
            }
        }
    }
    true
}

/// All minimum-cardinality QI supersets of `S`, by enumerating every
/// subset of its zero entries.
pub fn exhaustive_min_qi_supersets(s: &SparsityPattern, delta: &SparsityPattern) -> Vec<SparsityPattern> {
    let (rows, cols) = s.shape();
    let zeros: Vec<(usize, usize)> = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .filter(|&(i, j)| !s.get(i, j))
        .collect();
    assert!(zeros.len() <= 16, "exhaustive search limited to 16 free zeros");
    let mut best: Vec<SparsityPattern> = Vec::new();
    let mut best_card = usize::MAX;
    for mask in 0u32..(1u32 << zeros.len()) {
        let added = mask.count_ones() as usize;
        if s.card() + added > best_card {
            continue;
        }
        let mut cand = s.clone();
        for (bit, &(i, j)) in zeros.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                cand.set(i, j, true);
            }
        }
        if naive_is_qi(&cand, delta) {
            let card = cand.card();
            if card < best_card {
                best_card = card;
                best.clear();
            }
            best.push(cand);
        }
    }
    best
}

/// Zooming grid search: evaluates `f` on a `points^d` grid, recentres on the
/// best point and shrinks the box by `shrink`, `rounds` times.
pub fn zoom_minimize<F>(f: F, center: &[f64], half_width: f64, points: usize, rounds: usize, shrink: f64) -> (f64, Vec<f64>)
where
    F: Fn(&[f64]) -> f64,
{
    let d = center.len();
    let mut c = center.to_vec();
    let mut w = half_width;
    let mut best = (f(&c), c.clone());
    for _ in 0..rounds {
        let total = points.pow(d as u32);
        let mut x = vec![0.0; d];
        for idx in 0..total {
            let mut r = idx;
            for k in 0..d {
                let p = r % points;
                r /= points;
                x[k] = c[k] - w + 2.0 * w * p as f64 / (points - 1) as f64;
            }
            let v = f(&x);
            if v < best.0 {
                best = (v, x.clone());
            }
        }
        c = best.1.clone();
        w *= shrink;
    }
    best
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `λ_max(ΦᵀCΦ − Φ̂ᵀCΦ̂)` from rollout maps of two gains.
pub fn regret_by_rollout(sys: &HorizonSystem, k: &DMatrix<f64>, k_hat: &DMatrix<f64>) -> f64 {
    let stack = |gain: &DMatrix<f64>| {
        let (px, pu) = rollout_maps(sys, gain);
        let mut s = DMatrix::zeros(px.nrows() + pu.nrows(), px.ncols());
        s.rows_mut(0, px.nrows()).copy_from(&px);
        s.rows_mut(px.nrows(), pu.nrows()).copy_from(&pu);
        s
    };
    let p = stack(k);
    let ph = stack(k_hat);
    lambda_max(&(p.tr_mul(&p) - ph.tr_mul(&ph)))
}
