mod common;

use common::*;
use intercept::bcs::{idx, Instant, ProblemVariant};
use intercept::diagnostics::{self, ACTIVE_TOL, COMPLEMENTARITY_TOL};
use intercept::problem::InterceptionSolution;
use intercept::vec3::Mat3;
use intercept::Vec3;

fn edge(sol: &InterceptionSolution, seg: usize, right: bool) -> Vec<f64> {
    let m = &sol.solution.mesh.segments[seg];
    m.node(if right { m.n_nodes() - 1 } else { 0 }).to_vec()
}

fn v3(y: &[f64], at: usize) -> Vec3<f64> {
    Vec3::from_slice(&y[at..at + 3])
}

#[test]
fn costate_rates_match_hamiltonian_gradient() {
    costate_fd_check(100).unwrap();
}

#[test]
fn oracle_conserves_energy_and_momentum() {
    oracle_conservation().unwrap();
}

#[test]
fn collocation_is_fourth_order() {
    collocation_slope().unwrap();
}

#[test]
fn hamiltonian_constant_per_segment() {
    for name in ["data_I", "ex6", "ex9"] {
        let sol = solve(name);
        let d = worst_drift(&sol);
        assert!(d <= 1e-6, "{name}: drift {d:.3e}");
    }
}

#[test]
fn primer_unit_at_optimal_impulses() {
    for name in ["data_I", "ex6"] {
        let sol = solve(name);
        let l = diagnostics::lawden(&sol, 401);
        assert!(l.pass, "{name}: {l:?}");
        for p in &l.primer_at_impulses {
            assert!((p - 1.0).abs() <= 1e-6, "{name}: primer {p}");
        }
    }
}

#[test]
fn fixed_t1_off_optimum_primer_exceeds_one() {
    let mut cfg = config("fixed_t1");
    cfg.variant = ProblemVariant::OneImpulseFixedT1 { t1: Instant::scaled(0.2) };
    let sol = solve_config(&cfg).unwrap();
    let l = diagnostics::lawden(&sol, 401);
    assert!((l.primer_at_impulses[0] - 1.0).abs() <= 1e-6, "{l:?}");
    assert!(l.primer_max > 1.0 + 1e-6, "{l:?}");
    assert!(!l.pass);
}

#[test]
fn impulse_along_negative_primer_without_box() {
    for name in ["data_I", "data_II", "ex6"] {
        let sol = solve(name);
        let pv = v3(&edge(&sol, 0, true), idx::PV);
        let dv = sol.params.dv1;
        let want = pv * (-dv.norm());
        assert!(close3(dv, want, 1e-6 * dv.norm()), "{name}: dv {dv:?} vs {want:?}");
    }
}

#[test]
fn complementarity_and_feasibility() {
    for name in ["data_I", "ex1", "ex2", "ex3", "ex6", "ex9"] {
        let cfg = config(name);
        let sol = solve_config(&cfg).unwrap();
        let rep = diagnostics::verify(&sol, &cfg.scenario, 1.0);
        assert!(rep.max_complementarity <= COMPLEMENTARITY_TOL, "{name}: {}", rep.max_complementarity);
        for c in &rep.constraints {
            assert!(c.g_scaled <= ACTIVE_TOL, "{name}: {} violated ({})", c.name, c.g);
        }
        assert!(rep.violations(1.0).is_empty(), "{name}: {:?}", rep.violations(1.0));
    }
}

#[test]
fn oracle_and_interpolant_agree() {
    for name in ["data_I", "data_III", "ex1", "ex6"] {
        let cfg = config(name);
        let sol = solve_config(&cfg).unwrap();
        let rep = diagnostics::verify(&sol, &cfg.scenario, 1.0);
        assert!(rep.interception_miss <= 1.0, "{name}: {}", rep.interception_miss);
        assert!((rep.interception_miss - rep.interpolant_miss).abs() <= 0.1, "{name}: {rep:?}");
        if let (Some(a), Some(b)) = (rep.terminal_deviation, rep.interpolant_terminal_deviation) {
            assert!(close3(a, b, 0.1), "{name}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn cost_is_sum_of_impulse_norms_and_times_ordered() {
    for name in ["data_I", "ex1", "ex6"] {
        let sol = solve(name);
        let p = &sol.params;
        let sum = p.dv1.norm() + p.dv2.map_or(0.0, |d| d.norm());
        assert!((p.cost() - sum).abs() <= 1e-12 * sum);
        let ts = p.instants(&sol.bvp.variant);
        assert!(ts.windows(2).all(|w| w[0] <= w[1]), "{name}: {ts:?}");
        assert!(ts[0] >= 0.0);
    }
}

#[test]
fn cost_invariant_under_rotation() {
    let base = config("data_I");
    let c0 = solve_config(&base).unwrap().params.cost();
    for m in [Mat3::rot_z(0.7), Mat3::rot_x(-1.1).mul_mat(&Mat3::rot_z(2.3))] {
        let mut cfg = base.clone();
        cfg.scenario = base.scenario.rotated(&m);
        cfg.guess.dv1 = cfg.guess.dv1.map(|d| m.mul_vec(&d));
        cfg.guess.costate0 = cfg.guess.costate0.map(|(a, b)| (m.mul_vec(&a), m.mul_vec(&b)));
        let sol = solve_config(&cfg).unwrap();
        assert!(rel(sol.params.cost(), c0) <= 1e-6, "{} vs {c0}", sol.params.cost());
    }
}

#[test]
fn initial_costate_is_cost_sensitivity() {
    cost_sensitivity_check().unwrap();
}
