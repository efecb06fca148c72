#![allow(dead_code)]

use std::path::PathBuf;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use intercept::config::{Overrides, RunConfig};
use intercept::bcs::idx;
use intercept::diagnostics;
use intercept::dynamics::{costate_derivative, hamiltonian, two_body_derivative, CartesianState, Costate, GravityModel};
use intercept::guess::build_guess;
use intercept::mpbvp::{newton_solve, Edges, EvalError, MeshFunction, SegmentMesh, SegmentedBvp, Solution, SolveOptions};
use intercept::oracle::{propagate_samples, RkOptions};
use intercept::problem::{solve_interception, InterceptionSolution};
use intercept::Vec3;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

pub fn config(name: &str) -> RunConfig {
    RunConfig::load(&scenario_path(name), &Overrides::default()).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn solve_config(cfg: &RunConfig) -> Result<InterceptionSolution, String> {
    let g = build_guess(&cfg.variant, &cfg.scenario, &cfg.guess).map_err(|e| e.to_string())?;
    solve_interception(cfg.variant, cfg.scenario.clone(), g, &cfg.options).map_err(|e| e.to_string())
}

pub fn solve(name: &str) -> InterceptionSolution {
    solve_config(&config(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Component-wise `|a - b| <= tol`.
pub fn close3(a: Vec3<f64>, b: Vec3<f64>, tol: f64) -> bool {
    (0..3).all(|i| (a[i] - b[i]).abs() <= tol)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn state_strategy() -> impl Strategy<Value = (CartesianState<f64>, Costate<f64>)> {
    let unit = (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("nonzero", |(x, y, z)| x * x + y * y + z * z > 1e-4)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z) / (x * x + y * y + z * z).sqrt());
    (unit.clone(), 6.6e6f64..4.2e7, unit.clone(), 0.0f64..9e3, unit.clone(), 1e-5f64..1e-2, unit, 0.1f64..2.0)
        .prop_map(|(ur, r, uv, v, upr, pr, upv, pv)| {
            (CartesianState::new(ur * r, uv * v), Costate::new(upr * pr, upv * pv))
        })
}

/// Costate and state rates against central differences of the Hamiltonian.
pub fn costate_fd_check(cases: u32) -> Result<String, String> {
    let g = GravityModel::<f64>::earth();
    let mut runner = TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let worst = std::cell::Cell::new(0.0f64);
    let res = runner.run(&state_strategy(), |(s, c)| {
        let h = |s: &CartesianState<f64>, c: &Costate<f64>| hamiltonian(s, c, &g).unwrap();
        let dc = costate_derivative(&s, &c, &g).unwrap();
        let ds = two_body_derivative(&s, &g).unwrap();
        let hr = 1e-4 * s.r.norm();
        let hv = 1e-3 * s.v.norm().max(1.0);
        let (hpr, hpv) = (1e-3 * c.p_r.norm(), 1e-3 * c.p_v.norm());
        let mut dh_dr = Vec3::zero();
        let mut dh_dv = Vec3::zero();
        let mut dh_dpr = Vec3::zero();
        let mut dh_dpv = Vec3::zero();
        for i in 0..3 {
            let mut e = Vec3::zero();
            e[i] = 1.0;
            let d = |sp: CartesianState<f64>, sm: CartesianState<f64>, cp: Costate<f64>, cm: Costate<f64>, step: f64| {
                (h(&sp, &cp) - h(&sm, &cm)) / (2.0 * step)
            };
            dh_dr[i] = d(CartesianState::new(s.r + e * hr, s.v), CartesianState::new(s.r - e * hr, s.v), c, c, hr);
            dh_dv[i] = d(CartesianState::new(s.r, s.v + e * hv), CartesianState::new(s.r, s.v - e * hv), c, c, hv);
            dh_dpr[i] = d(s, s, Costate::new(c.p_r + e * hpr, c.p_v), Costate::new(c.p_r - e * hpr, c.p_v), hpr);
            dh_dpv[i] = d(s, s, Costate::new(c.p_r, c.p_v + e * hpv), Costate::new(c.p_r, c.p_v - e * hpv), hpv);
        }
        // p' = -dH/dx, x' = dH/dp
        let errs = [
            (dc.p_r + dh_dr).norm() / dh_dr.norm(),
            (dc.p_v + dh_dv).norm() / dh_dv.norm(),
            (ds.r - dh_dpr).norm() / dh_dpr.norm().max(1e-300),
            (ds.v - dh_dpv).norm() / dh_dpv.norm(),
        ];
        let e = errs.iter().fold(0.0f64, |a, &b| a.max(if b.is_nan() { 0.0 } else { b }));
        worst.set(worst.get().max(e));
        prop_assert!(e <= 1e-6, "relative FD mismatch {e:.3e} at {s:?} {c:?}");
        Ok(())
    });
    match res {
        Ok(()) => Ok(format!("{cases} points, worst relative mismatch {:.2e}", worst.get())),
        Err(e) => Err(e.to_string()),
    }
}

/// Energy and angular momentum along oracle arcs of the bundled data sets.
pub fn oracle_conservation() -> Result<String, String> {
    let g = GravityModel::<f64>::earth();
    let mut worst = 0.0f64;
    for name in ["data_I", "data_II", "data_III"] {
        let sc = config(name).scenario;
        for s0 in [sc.interceptor0, sc.target0] {
            let offsets: Vec<f64> = (1..=40).map(|i| 25.0 * i as f64).collect();
            let arc = propagate_samples(&s0, &offsets, &g, &RkOptions::default()).map_err(|e| e.to_string())?;
            let (e0, h0) = (s0.specific_energy(&g), s0.angular_momentum());
            for s in arc {
                worst = worst.max(rel(s.specific_energy(&g), e0));
                worst = worst.max((s.angular_momentum() - h0).norm() / h0.norm());
            }
        }
    }
    if worst <= 1e-8 {
        Ok(format!("worst relative drift {worst:.2e} over 1000 s arcs"))
    } else {
        Err(format!("relative drift {worst:.3e} > 1e-8"))
    }
}

/// `y'' = -(pi/2)^2 y`, `y(0) = 0`, `y(1) = 1`: exact `sin(pi s / 2)`.
pub struct Harmonic;

impl SegmentedBvp for Harmonic {
    fn n_segments(&self) -> usize {
        1
    }
    fn dim(&self, _: usize) -> usize {
        2
    }
    fn n_params(&self) -> usize {
        0
    }
    fn n_bc(&self) -> usize {
        2
    }
    fn rhs(&self, _: usize, _: f64, y: &[f64], _: &[f64], dy: &mut [f64]) -> Result<(), EvalError> {
        let w = std::f64::consts::FRAC_PI_2;
        dy[0] = y[1];
        dy[1] = -w * w * y[0];
        Ok(())
    }
    fn bc(&self, e: &[Edges<'_>], _: &[f64], r: &mut [f64]) -> Result<(), EvalError> {
        r[0] = e[0].left[0];
        r[1] = e[0].right[0] - 1.0;
        Ok(())
    }
}

/// Least-squares slope of log max error against log h on uniform meshes.
pub fn collocation_slope() -> Result<String, String> {
    let w = std::f64::consts::FRAC_PI_2;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for n in [6usize, 11, 21, 41] {
        let mut m = MeshFunction {
            segments: vec![SegmentMesh::uniform(2, 0.0, 1.0, n, |s| vec![s, 1.0])],
            params: vec![],
        };
        newton_solve(&Harmonic, &mut m, &SolveOptions::with_tol(1e-13)).map_err(|e| e.to_string())?;
        let sol = Solution::from_mesh(&Harmonic, m).map_err(|e| e.to_string())?;
        let err = (0..=400)
            .map(|i| {
                let s = i as f64 / 400.0;
                (sol.eval(0, s).0[0] - (w * s).sin()).abs()
            })
            .fold(0.0f64, f64::max);
        xs.push((1.0 / (n - 1) as f64).ln());
        ys.push(err.ln());
    }
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    if (slope - 4.0).abs() <= 0.3 {
        Ok(format!("slope {slope:.3}"))
    } else {
        Err(format!("slope {slope:.3} outside 4 +- 0.3"))
    }
}

/// Worst Hamiltonian drift over the segments of a solution.
pub fn worst_drift(sol: &InterceptionSolution) -> f64 {
    diagnostics::hamiltonian_drift(sol, 401).iter().fold(0.0f64, |a, d| a.max(d.relative_drift))
}

/// The initial costate is the gradient of the optimal cost with respect to
/// the interceptor's initial state: central differences of re-solved costs.
pub fn cost_sensitivity_check() -> Result<String, String> {
    let base = config("data_I");
    let sol = solve_config(&base)?;
    let m = &sol.solution.mesh.segments[0];
    let y0 = m.node(0);
    let (pr, pv) = (Vec3::from_slice(&y0[idx::PR..idx::PR + 3]), Vec3::from_slice(&y0[idx::PV..idx::PV + 3]));
    let dirs = [
        (Vec3::new(1.0, 0.0, 0.0), Vec3::zero()),
        (Vec3::zero(), Vec3::new(0.0, 1.0, 0.0)),
        (Vec3::new(0.3, -0.5, 0.8), Vec3::new(-0.2, 0.4, 0.1)),
    ];
    let (hr, hv) = (100.0, 0.1);
    let mut worst = 0.0f64;
    for (dr, dv) in dirs {
        let cost_at = |k: f64| {
            let mut cfg = base.clone();
            cfg.scenario.interceptor0.r += dr * (k * hr);
            cfg.scenario.interceptor0.v += dv * (k * hv);
            cfg.options.solve.tol = 1e-11;
            solve_config(&cfg).map(|s| s.params.cost())
        };
        let fd = (cost_at(1.0)? - cost_at(-1.0)?) / 2.0;
        let an = pr.dot(&dr) * hr + pv.dot(&dv) * hv;
        worst = worst.max(rel(fd, an));
        if !(rel(fd, an) <= 1e-6) {
            return Err(format!("directional derivative {fd:.9e} vs costate {an:.9e}"));
        }
    }
    Ok(format!("3 directions, worst relative mismatch {worst:.2e}"))
}
