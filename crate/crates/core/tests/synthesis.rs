mod common;

use nalgebra::DMatrix;
use spregret_core::conic::ToleranceConfig;
use spregret_core::evaluation::spregret_value;
use spregret_core::model::{build_block_lift, HorizonSystem};
use spregret_core::sls::{causal_pattern, ClosedLoopMap, Restriction};
use spregret_core::synthesis::*;
use spregret_core::{CostWeights, Error, SparsityPattern};

fn scalar(a: f64, b: f64, horizon: usize) -> HorizonSystem {
    HorizonSystem::lti(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b), horizon).unwrap()
}

fn gain_from(params: &[f64], support: &[(usize, usize)], dims: (usize, usize)) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(dims.0, dims.1);
    for (&v, &(i, j)) in params.iter().zip(support) {
        k[(i, j)] = v;
    }
    k
}

#[test]
fn h2_matches_riccati_on_random_plants() {
    let mut rng = common::rng(21);
    for (n, m, horizon) in [(1, 1, 4), (2, 1, 5), (3, 2, 4), (2, 2, 6)] {
        let sys = common::random_plant(&mut rng, n, m, horizon);
        let lift = build_block_lift(&sys).unwrap();
        let cost = CostWeights::identity(lift.stacked_rows());
        let spec = SynthesisSpec::new(lift.clone(), cost, causal_pattern(&lift), Objective::H2 { sigma: None }).unwrap();
        let got = synthesize_h2(&spec).unwrap().value;
        let want = common::riccati_h2(&sys);
        assert!((got - want).abs() <= 1e-6 * want, "n={n} m={m} T={horizon}: {got} vs {want}");
    }
}

#[test]
fn hinf_value_is_the_worst_case_cost() {
    let mut rng = common::rng(22);
    for _ in 0..4 {
        let sys = common::random_plant(&mut rng, 2, 1, 4);
        let lift = build_block_lift(&sys).unwrap();
        let cost = CostWeights::identity(lift.stacked_rows());
        let s = common::random_causal_pattern(&mut rng, 2, 1, 4, 0.6);
        let r = synthesize_hinf(&SynthesisSpec::new(lift, cost.clone(), s.clone(), Objective::Hinf).unwrap()).unwrap();
        let check = worst_case_value(&r.phi, &cost);
        assert!((r.value - check).abs() <= 1e-6 * r.value);
        assert!(r.controller.pattern == s);
    }
}

#[test]
fn hinf_matches_grid_search() {
    let sys = scalar(1.0, 1.0, 2);
    let lift = build_block_lift(&sys).unwrap();
    let cost = CostWeights::identity(lift.stacked_rows());
    let r = synthesize_hinf(&SynthesisSpec::new(lift.clone(), cost, causal_pattern(&lift), Objective::Hinf).unwrap()).unwrap();
    let support = [(0, 0), (1, 0), (1, 1)];
    let f = |p: &[f64]| {
        let k = gain_from(p, &support, (2, 2));
        let (px, pu) = common::rollout_maps(&sys, &k);
        common::lambda_max(&(px.tr_mul(&px) + pu.tr_mul(&pu)))
    };
    let (grid, _) = common::zoom_minimize(f, &[0.0, 0.0, 0.0], 3.0, 21, 14, 0.35);
    assert!((r.value - grid).abs() <= 1e-4, "sdp {} grid {}", r.value, grid);
}

#[test]
fn spregret_matches_grid_search() {
    let sys = scalar(1.0, 1.0, 2);
    let lift = build_block_lift(&sys).unwrap();
    let cost = CostWeights::identity(lift.stacked_rows());
    let s = SparsityPattern::from_text("00\n11").unwrap();
    let s_hat = SparsityPattern::tril(2);
    let oracle = synthesize_oracle(&lift, &cost, &s_hat, OracleObjective::Hinf, Restriction::None, default_tolerances()).unwrap();
    let k_hat = oracle.result.controller.k.clone();
    let spec = SynthesisSpec::new(
        lift.clone(),
        cost.clone(),
        s,
        Objective::SpRegret { oracle: oracle.result.phi.clone(), expect_nonnegative: true },
    )
    .unwrap();
    let r = synthesize_spregret(&spec).unwrap();
    let support = [(1, 0), (1, 1)];
    let f = |p: &[f64]| common::regret_by_rollout(&sys, &gain_from(p, &support, (2, 2)), &k_hat);
    let (grid, _) = common::zoom_minimize(f, &[0.0, 0.0], 3.0, 41, 14, 0.3);
    assert!((r.value - grid).abs() <= 1e-4, "sdp {} grid {}", r.value, grid);
        // The recovered controller respects S exactly.
    assert_eq!(r.controller.k[(0, 0)], 0.0);
    assert_eq!(r.controller.k[(0, 1)], 0.0);
    assert!(r.value > 1e-3, "u₀ is unavailable, so the oracle is strictly better somewhere");
}

#[test]
fn zero_oracle_reduces_to_hinf() {
    let mut rng = common::rng(23);
    let sys = common::random_plant(&mut rng, 2, 1, 3);
    let lift = build_block_lift(&sys).unwrap();
    let cost = CostWeights::identity(lift.stacked_rows());
    let s = common::random_causal_pattern(&mut rng, 2, 1, 3, 0.6);
    let zero = ClosedLoopMap { phi_x: DMatrix::zeros(lift.nt(), lift.nt()), phi_u: DMatrix::zeros(lift.mt(), lift.nt()) };
    let regret = synthesize_spregret(
        &SynthesisSpec::new(lift.clone(), cost.clone(), s.clone(), Objective::SpRegret { oracle: zero, expect_nonnegative: false }).unwrap(),
    )
    .unwrap();
    let hinf = synthesize_hinf(&SynthesisSpec::new(lift, cost, s, Objective::Hinf).unwrap()).unwrap();
    assert!((regret.value - hinf.value).abs() <= 1e-6 * (1.0 + hinf.value));
}

#[test]
fn oracle_refuses_non_qi_pattern() {
    let sys = HorizonSystem::lti(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
        3,
    )
    .unwrap();
    let lift = build_block_lift(&sys).unwrap();
    let cost = CostWeights::identity(lift.stacked_rows());
    // Decentralized: uⁱ reads only xⁱ, although u¹ drives x² through A.
    let s = SparsityPattern::tril_kron(3, &SparsityPattern::identity(2));
    assert!(!spregret_core::sparsity::is_qi(&s, &lift.delta).unwrap());
    let err = synthesize_oracle(&lift, &cost, &s, OracleObjective::Hinf, Restriction::None, default_tolerances()).unwrap_err();
    assert!(matches!(err, Error::NotQuadraticallyInvariant { .. }));
}

#[test]
fn pipeline_is_well_posed_on_random_instances() {
    let mut rng = common::rng(24);
    for _ in 0..4 {
        let sys = common::random_plant(&mut rng, 2, 2, 3);
        let lift = build_block_lift(&sys).unwrap();
        let cost = CostWeights::identity(lift.stacked_rows());
        let s = common::random_causal_pattern(&mut rng, 2, 2, 3, 0.4);
        let out = pipeline(&s, &lift, &cost, &PipelineConfig::default()).unwrap();
        assert!(out.report.lambda_star >= -1e-6);
        assert!(s.is_subset_of(&out.report.s_hat));
        let check = spregret_value(&out.phi, &out.oracle.result.phi, &cost).unwrap().value;
        assert!((check - out.report.lambda_star).abs() <= 1e-6 * (1.0 + check.abs()));
    }
}

#[test]
fn toeplitz_regret_program_counts() {
    let sys = scalar(0.9, 1.0, 4);
    let lift = build_block_lift(&sys).unwrap();
    let cost = CostWeights::identity(lift.stacked_rows());
    let cfg = PipelineConfig { restriction: Restriction::Toeplitz, oracle: OracleChoice::Centralized, ..Default::default() };
    let out = pipeline(&causal_pattern(&lift), &lift, &cost, &cfg).unwrap();
    assert_eq!(out.report.free_variables, 4 + 1);
    assert!(out.report.lambda_star.abs() <= 1e-6, "same pattern as the oracle gives zero regret");
}

#[test]
fn looser_tolerances_are_honoured() {
    let sys = scalar(0.9, 1.0, 3);
    let lift = build_block_lift(&sys).unwrap();
    let cost = CostWeights::identity(lift.stacked_rows());
    let tol = ToleranceConfig { tol_gap: 1e-5, ..Default::default() };
    let r = synthesize_hinf(&SynthesisSpec::new(lift.clone(), cost, causal_pattern(&lift), Objective::Hinf).unwrap().with_tolerances(tol)).unwrap();
    assert_eq!(r.stats.tolerances, tol);
}
