mod support;

use bnwdro::ambiguity::{AmbiguitySet, GroundNorm};
use bnwdro::oracle::{discretize_support, worst_case_oracle};
use bnwdro::reformulate::{fixed_decision_program, max_affine, Polytope};
use bnwdro::solve::{solve_lp, SolverConfig};
use proptest::prelude::*;
use support::*;

fn dual_value(set: &AmbiguitySet, loss: &[(Vec<f64>, f64)], support: &Polytope) -> f64 {
    let p = fixed_decision_program(set, loss, support, GroundNorm::L1).unwrap();
    solve_lp(&p, &SolverConfig::default()).unwrap().objective.unwrap()
}

fn atoms(set: &AmbiguitySet) -> Vec<Vec<f64>> {
    set.balls().unwrap().iter().flat_map(|b| b.center.atoms.iter().map(|a| a.point.clone())).collect()
}

fn oracle_value(f: &OracleFixture, delta: f64) -> f64 {
    let pts = atoms(&f.set);
    let extra: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
    let grid = discretize_support(&f.support, delta, &extra).unwrap();
    worst_case_oracle(&f.set, &f.loss, &grid, GroundNorm::L1).unwrap()
}

#[test]
fn dual_matches_grid_oracle_with_first_order_gap() {
    let fixtures = oracle_fixtures();
    assert!(fixtures.len() >= 20);
    let mut shrinking = 0;
    for f in &fixtures {
        let dual = dual_value(&f.set, &f.loss, &f.support);
        let coarse = dual - oracle_value(f, f.delta);
        let fine = dual - oracle_value(f, f.delta / 2.0);
        let bound = max_gradient_inf_norm(&f.loss) * f.delta;
        assert!(coarse >= -1e-7 && fine >= -1e-7, "{}: oracle above dual ({coarse}, {fine})", f.name);
        assert!(coarse <= bound, "{}: gap {coarse} > {bound}", f.name);
        assert!(fine <= 0.6 * coarse + 1e-9, "{}: gap {coarse} -> {fine}", f.name);
        if coarse > 1e-6 {
            shrinking += 1;
        }
    }
    // most fixtures must actually exercise the discretisation error
    assert!(shrinking >= fixtures.len() / 2, "only {shrinking} fixtures had a visible gap");
}

#[test]
fn zero_radius_is_the_sample_average() {
    for f in oracle_fixtures() {
        let set = f.set.with_radius(0.0);
        let pooled: f64 = set
            .balls()
            .unwrap()
            .iter()
            .map(|b| b.weight * b.center.expectation(|w| max_affine(&f.loss, w)))
            .sum();
        let v = dual_value(&set, &f.loss, &f.support);
        assert!((v - pooled).abs() <= 1e-8, "{}: {v} vs {pooled}", f.name);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn value_is_monotone_in_each_radius(seed in any::<u64>(), bump in 0.0f64..0.5, which in 0usize..3) {
        let mut r = rng(seed);
        let set = random_ball_set(&mut r, &[-1.0], &[1.0]);
        let loss = random_loss(&mut r, 1);
        let support = Polytope::interval(-1.0, 1.0).unwrap();
        let AmbiguitySet::Bnwdro { balls } = &set else { unreachable!() };
        let mut bigger = balls.clone();
        let k = which % bigger.len();
        bigger[k].radius += bump;
        let before = dual_value(&set, &loss, &support);
        let after = dual_value(&AmbiguitySet::Bnwdro { balls: bigger }, &loss, &support);
        prop_assert!(after >= before - 1e-8, "{before} -> {after}");
    }

    #[test]
    fn appending_grid_nodes_never_lowers_the_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let set = random_ball_set(&mut r, &[0.0], &[1.0]);
        let loss = random_loss(&mut r, 1);
        let support = Polytope::interval(0.0, 1.0).unwrap();
        let pts = atoms(&set);
        let extra: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let coarse = discretize_support(&support, 0.1, &extra).unwrap();
        let mut dense = coarse.clone();
        dense.nodes.extend((0..7).map(|_| random_point(&mut r, &[0.0], &[1.0])));
        let a = worst_case_oracle(&set, &loss, &coarse, GroundNorm::L1).unwrap();
        let b = worst_case_oracle(&set, &loss, &dense, GroundNorm::L1).unwrap();
        prop_assert!(b >= a - 1e-9);
    }
}
