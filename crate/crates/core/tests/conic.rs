mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use spregret_core::conic::{solve, SdpProblem, SolveStatus, ToleranceConfig};

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `min t` s.t. `tI − M ⪰ 0`.
fn lambda_max_problem(m: &DMatrix<f64>) -> SdpProblem {
    let d = m.nrows();
    let mut p = SdpProblem::new();
    let t = p.add_variable("t");
    p.add_lmi(-m.clone(), &[(t, DMatrix::identity(d, d))]).unwrap();
    p.set_objective(&[(t, 1.0)]).unwrap();
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn eigenvalue_sdp_matches_eigensolver(seed in any::<u64>(), d in 1usize..=6) {
        let mut rng = common::rng(seed);
        let m = sym(&common::gaussian(&mut rng, d, d));
        let sol = solve(&lambda_max_problem(&m), &ToleranceConfig::default());
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let want = common::lambda_max(&m);
        prop_assert!((sol.objective - want).abs() <= 1e-6 * (1.0 + want.abs()));
        prop_assert!(sol.psd_min_eig >= -1e-7);
    }

    /// `min Σ c_i y_i` s.t. `diag(y) ⪰ diag(l)`: the optimum is `Σ c_i l_i`.
    #[test]
    fn diagonal_lp(seed in any::<u64>(), d in 1usize..=5) {
        let mut rng = common::rng(seed);
        let lower = common::gaussian(&mut rng, d, 1);
        let cost: Vec<f64> = (0..d).map(|i| 0.5 + (i as f64)).collect();
        let mut p = SdpProblem::new();
        let first = p.add_variables("y", d);
        let terms: Vec<_> = (0..d)
            .map(|i| {
                let mut e = DMatrix::zeros(d, d);
                e[(i, i)] = 1.0;
                (spregret_core::conic::VarId(first.0 + i), e)
            })
            .collect();
        p.add_lmi(-DMatrix::from_diagonal(&lower.column(0)), &terms).unwrap();
        let obj: Vec<_> = terms.iter().zip(&cost).map(|((v, _), &c)| (*v, c)).collect();
        p.set_objective(&obj).unwrap();
        let sol = solve(&p, &ToleranceConfig::default());
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let want: f64 = (0..d).map(|i| cost[i] * lower[(i, 0)]).sum();
        prop_assert!((sol.objective - want).abs() <= 1e-6 * (1.0 + want.abs()));
    }
}

/// `min y₁ + y₂` s.t. `y₁ − y₂ = 1`, `[[y₁, 1], [1, y₂]] ⪰ 0` has value `√5`.
#[test]
fn equality_and_lmi() {
    let mut p = SdpProblem::new();
    let y1 = p.add_variable("y1");
    let y2 = p.add_variable("y2");
    p.add_equality(&[(y1, 1.0), (y2, -1.0)], 1.0).unwrap();
    let off = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let e11 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let e22 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
    p.add_lmi(off, &[(y1, e11), (y2, e22)]).unwrap();
    p.set_objective(&[(y1, 1.0), (y2, 1.0)]).unwrap();
    let sol = solve(&p, &ToleranceConfig::default());
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.objective - 5f64.sqrt()).abs() < 1e-7, "{}", sol.objective);
    assert!(sol.equality_residual <= 1e-8);
}

#[test]
fn infeasible_and_unbounded_are_reported() {
    // y ≥ 1 and y ≤ 0.
    let mut p = SdpProblem::new();
    let y = p.add_variable("y");
    p.add_lmi(DMatrix::from_diagonal_element(1, 1, -1.0), &[(y, DMatrix::from_element(1, 1, 1.0))]).unwrap();
    p.add_lmi(DMatrix::zeros(1, 1), &[(y, DMatrix::from_element(1, 1, -1.0))]).unwrap();
    p.set_objective(&[(y, 1.0)]).unwrap();
    assert_eq!(solve(&p, &ToleranceConfig::default()).status, SolveStatus::Infeasible);

    // min −y s.t. y ≥ 0.
    let mut q = SdpProblem::new();
    let y = q.add_variable("y");
    q.add_lmi(DMatrix::zeros(1, 1), &[(y, DMatrix::from_element(1, 1, 1.0))]).unwrap();
    q.set_objective(&[(y, -1.0)]).unwrap();
    assert_eq!(solve(&q, &ToleranceConfig::default()).status, SolveStatus::Unbounded);
}

#[test]
fn iteration_cap_is_reported() {
    let mut rng = common::rng(3);
    let m = sym(&common::gaussian(&mut rng, 5, 5));
    let tol = ToleranceConfig { max_iter: 2, ..Default::default() };
    let sol = solve(&lambda_max_problem(&m), &tol);
    assert_eq!(sol.status, SolveStatus::MaxIter);
    assert!(sol.clone().require_optimal().is_err());
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let mut rng = common::rng(4);
    let m = sym(&common::gaussian(&mut rng, 6, 6));
    let p = lambda_max_problem(&m);
    let a = solve(&p, &ToleranceConfig::default());
    let b = solve(&p, &ToleranceConfig::default());
    assert_eq!(a.values, b.values);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn unconstrained_quadratic() {
    // min (y − 2)² = y² − 4y + 4.
    let mut p = SdpProblem::new();
    let y = p.add_variable("y");
    p.set_quadratic_objective(4.0, &[(y, -4.0)], DMatrix::from_element(1, 1, 1.0)).unwrap();
    let sol = solve(&p, &ToleranceConfig::default());
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.value(y) - 2.0).abs() < 1e-10);
    assert!(sol.objective.abs() < 1e-10);
}
