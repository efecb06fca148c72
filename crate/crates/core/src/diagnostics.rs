//! Checks on converged solutions: cost, primer history, Lawden conditions,
//! constraint status, Hamiltonian drift and fixed-instant sweeps.
//!
//! Interception miss and terminal deviation are recomputed with the RK
//! oracle from the initial states and the impulses alone, so they do not
//! trust the collocation interpolant.

use serde::{Deserialize, Serialize};

use crate::bcs::{self, idx, Instant, ProblemVariant, UnknownParameters, POS_SCALE, SLACK_DIM};
use crate::dynamics::{hamiltonian, slack_hamiltonian_term, CartesianState, Costate, DynamicsError, SlacknessState};
use crate::guess::{build_guess, GuessSpec};
use crate::problem::{solve_interception, InterceptionOptions, InterceptionSolution};
use crate::scenarios::Scenario;
use crate::vec3::Vec3;

/// Scaled `|g|` at or below this counts as active.
pub const ACTIVE_TOL: f64 = 1e-6;
pub const COMPLEMENTARITY_TOL: f64 = 1e-8;
pub const PRIMER_TOL: f64 = 1e-6;
/// Oracle tolerance used for the re-propagation.
const ORACLE_TOL: f64 = 1e-13;

pub fn cost(p: &UnknownParameters) -> f64 {
    p.cost()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instants {
    pub t1: f64,
    pub t2: Option<f64>,
    pub th: f64,
    pub tf: Option<f64>,
}

impl From<&UnknownParameters> for Instants {
    fn from(p: &UnknownParameters) -> Self {
        Instants { t1: p.t1, t2: p.t2, th: p.th, tf: p.tf }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lawden {
    /// `|p_v(t_i-)|` at each impulse.
    pub primer_at_impulses: Vec<f64>,
    pub primer_max: f64,
    /// Unit primer at every impulse and nowhere above one.
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintStatus {
    pub name: String,
    /// `g <= 0` in physical units.
    pub g: f64,
    pub g_scaled: f64,
    /// Static-slackness multiplier; `None` for the dynamic-slack terminal faces.
    pub multiplier: Option<f64>,
    pub active: bool,
    /// `multiplier * g_scaled`.
    pub complementarity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianDrift {
    pub segment: usize,
    pub mean: f64,
    /// `(max - min)` over the larger of `|mean|` and the term magnitudes.
    pub relative_drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub scenario: String,
    pub variant: ProblemVariant,
    pub cost: f64,
    pub instants: Instants,
    pub dv1: Vec3<f64>,
    pub dv2: Option<Vec3<f64>>,
    /// Oracle `|r_M(th) - r_T(th)|`, meters.
    pub interception_miss: f64,
    /// The same from the collocation interpolant.
    pub interpolant_miss: f64,
    /// Oracle `r_M(tf) - r_f` on variants with a tail arc.
    pub terminal_deviation: Option<Vec3<f64>>,
    pub interpolant_terminal_deviation: Option<Vec3<f64>>,
    pub constraints: Vec<ConstraintStatus>,
    pub active_constraints: Vec<String>,
    pub max_complementarity: f64,
    pub lawden: Lawden,
    pub hamiltonian: Vec<HamiltonianDrift>,
    pub multipliers: Multipliers,
    pub max_residual: f64,
    pub bc_residual: f64,
    pub nodes: usize,
    pub corrections: Vec<String>,
}

impl SolutionReport {
    /// Reasons the solution fails verification; empty when it passes.
    pub fn violations(&self, tol_pos: f64) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.interception_miss <= tol_pos) {
            out.push(format!("interception miss {:.6e} m > {tol_pos} m", self.interception_miss));
        }
        for c in &self.constraints {
            if c.g_scaled > ACTIVE_TOL {
                out.push(format!("{} violated: g = {:.6e} (scaled {:.3e})", c.name, c.g, c.g_scaled));
            }
            if let Some(p) = c.complementarity {
                if p.abs() > COMPLEMENTARITY_TOL {
                    out.push(format!("{} complementarity {:.3e}", c.name, p));
                }
            }
        }
        out
    }

    /// Aligned two-column text.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("scenario".into(), self.scenario.clone()),
            ("variant".into(), self.variant.to_string()),
            ("cost [m/s]".into(), num(self.cost)),
            ("t1 [s]".into(), num(self.instants.t1)),
        ];
        if let Some(t2) = self.instants.t2 {
            rows.push(("t2 [s]".into(), num(t2)));
        }
        rows.push(("th [s]".into(), num(self.instants.th)));
        if let Some(tf) = self.instants.tf {
            rows.push(("tf [s]".into(), num(tf)));
        }
        rows.push(("dv1 [m/s]".into(), fmt_vec(&self.dv1)));
        if let Some(d) = self.dv2 {
            rows.push(("dv2 [m/s]".into(), fmt_vec(&d)));
        }
        rows.push(("interception miss [m]".into(), num(self.interception_miss)));
        if let Some(d) = self.terminal_deviation {
            rows.push(("terminal deviation [m]".into(), fmt_vec(&d)));
        }
        let vs = |v: &[f64]| v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", ");
        if !self.multipliers.lambda.is_empty() {
            rows.push(("lambda".into(), vs(&self.multipliers.lambda)));
        }
        if !self.multipliers.mu.is_empty() {
            rows.push(("mu".into(), vs(&self.multipliers.mu)));
        }
        if !self.multipliers.eta.is_empty() {
            rows.push(("eta".into(), vs(&self.multipliers.eta)));
        }
        rows.push(("active".into(), self.active_constraints.join("; ")));
        rows.push(("primer at impulses".into(), vs(&self.lawden.primer_at_impulses)));
        rows.push(("primer max".into(), num(self.lawden.primer_max)));
        rows.push(("lawden".into(), if self.lawden.pass { "pass".into() } else { "flag".into() }));
        rows.push(("max residual".into(), num(self.max_residual)));
        rows.push(("bc residual".into(), num(self.bc_residual)));
        rows.push(("nodes".into(), self.nodes.to_string()));
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<w$}  {v}\n")).collect()
    }
}

/// Shortest round-trip form, with an exponent outside `[1e-4, 1e12)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e12).contains(&a) || !a.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn fmt_vec(v: &Vec3<f64>) -> String {
    format!("({}, {}, {})", num(v.x), num(v.y), num(v.z))
}

/// Physical time of normalized `s` on segment `k`.
fn time_of(inst: &[f64], k: usize, s: f64) -> f64 {
    let n = inst.len() as f64;
    let a = if k == 0 { 0.0 } else { inst[k - 1] };
    a + (s - k as f64 / n) * n * (inst[k] - a)
}

/// One interpolated point of the solution.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub segment: usize,
    pub t: f64,
    pub y: Vec<f64>,
}

/// `n` points per segment, uniform in normalized time; the end points are
/// the stored edge values, not interpolated.
pub fn samples(sol: &InterceptionSolution, n: usize) -> Vec<Sample> {
    let n = n.max(2);
    let inst = sol.params.instants(&sol.bvp.variant);
    let ns = inst.len();
    let mut out = Vec::with_capacity(n * ns);
    for (k, seg) in sol.solution.mesh.segments.iter().enumerate() {
        let (a, b) = (k as f64 / ns as f64, (k + 1) as f64 / ns as f64);
        for j in 0..n {
            let y = if j == 0 {
                seg.node(0).to_vec()
            } else if j == n - 1 {
                seg.node(seg.n_nodes() - 1).to_vec()
            } else {
                sol.solution.eval(k, a + (b - a) * j as f64 / (n - 1) as f64).0
            };
            let s = a + (b - a) * j as f64 / (n - 1) as f64;
            out.push(Sample { segment: k, t: time_of(&inst, k, s), y });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimerSample {
    pub segment: usize,
    pub t: f64,
    pub magnitude: f64,
}

pub fn primer_history(sol: &InterceptionSolution, n_samples: usize) -> Vec<PrimerSample> {
    samples(sol, n_samples)
        .into_iter()
        .map(|s| PrimerSample {
            segment: s.segment,
            t: s.t,
            magnitude: Vec3::from_slice(&s.y[idx::PV..]).norm(),
        })
        .collect()
}

pub fn lawden(sol: &InterceptionSolution, n_samples: usize) -> Lawden {
    let segs = &sol.solution.mesh.segments;
    let at: Vec<f64> = (0..sol.bvp.variant.n_impulses())
        .map(|i| {
            let seg = &segs[i];
            Vec3::from_slice(&seg.node(seg.n_nodes() - 1)[idx::PV..]).norm()
        })
        .collect();
    let max = primer_history(sol, n_samples).iter().fold(0.0f64, |a, s| a.max(s.magnitude));
    let pass = at.iter().all(|p| (p - 1.0).abs() <= PRIMER_TOL) && max <= 1.0 + PRIMER_TOL;
    Lawden { primer_at_impulses: at, primer_max: max, pass }
}

/// Interceptor Hamiltonian, with the slack terms on the slack segments.
fn hamiltonian_at(sol: &InterceptionSolution, k: usize, y: &[f64]) -> Result<(f64, f64), DynamicsError> {
    let g = &sol.bvp.scenario.gravity;
    let s = CartesianState::from_slice(&y[idx::R..idx::R + 6]);
    let c = Costate::from_slice(&y[idx::PR..idx::PR + 6]);
    let mut h = hamiltonian(&s, &c, g)?;
    let a = crate::dynamics::gravity_accel(&s.r, g)?;
    let mut mag = c.p_r.norm() * s.v.norm() + c.p_v.norm() * a.norm();
    if y.len() == SLACK_DIM {
        let cs = &sol.bvp.scenario.constraints;
        let sl = SlacknessState {
            eps: Vec3::from_slice(&y[idx::EPS..]),
            p_eps: Vec3::from_slice(&y[idx::PEPS..]),
            k3: cs.k3,
            k4: cs.k4,
        };
        // dynamic slack segments are the third and fourth
        let term = slack_hamiltonian_term(k + 1, &sl)?;
        h += term;
        mag += term.abs();
    }
    Ok((h, mag))
}

/// Drift of the Hamiltonian along each segment of positive length.
pub fn hamiltonian_drift(sol: &InterceptionSolution, n_samples: usize) -> Vec<HamiltonianDrift> {
    let inst = sol.params.instants(&sol.bvp.variant);
    let smp = samples(sol, n_samples);
    let mut out = Vec::new();
    for k in 0..inst.len() {
        let a = if k == 0 { 0.0 } else { inst[k - 1] };
        if inst[k] - a <= 0.0 {
            continue;
        }
        let vals: Vec<(f64, f64)> =
            smp.iter().filter(|s| s.segment == k).filter_map(|s| hamiltonian_at(sol, k, &s.y).ok()).collect();
        if vals.is_empty() {
            continue;
        }
        let mean = vals.iter().map(|v| v.0).sum::<f64>() / vals.len() as f64;
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v.0), h.max(v.0)));
        let mag = vals.iter().fold(mean.abs(), |m, v| m.max(v.1));
        out.push(HamiltonianDrift { segment: k, mean, relative_drift: if mag > 0.0 { (hi - lo) / mag } else { 0.0 } });
    }
    out
}

/// Oracle interceptor and target states at `th`, and the interceptor at `tf`.
pub fn oracle_states(
    variant: &ProblemVariant,
    sc: &Scenario,
    p: &UnknownParameters,
) -> Result<(CartesianState<f64>, CartesianState<f64>, Option<CartesianState<f64>>), DynamicsError> {
    let g = &sc.gravity;
    let mut s = sc.interceptor0;
    let mut t = 0.0;
    for (ti, dv) in p.impulse_times().into_iter().zip(p.impulses()) {
        s = crate::oracle::propagate(&s, ti - t, g, ORACLE_TOL)?;
        s.v += dv;
        t = ti;
    }
    let hit = crate::oracle::propagate(&s, p.th - t, g, ORACLE_TOL)?;
    let target = crate::oracle::propagate(&sc.target0, p.th, g, ORACLE_TOL)?;
    let fin = match (variant.has_tail(), p.tf) {
        (true, Some(tf)) => Some(crate::oracle::propagate(&hit, tf - p.th, g, ORACLE_TOL)?),
        _ => None,
    };
    Ok((hit, target, fin))
}

/// Constraint status at `p`, with `r_tf` the interceptor position at `tf`
/// for the terminal box.
pub fn constraint_status(
    variant: &ProblemVariant,
    sc: &Scenario,
    p: &UnknownParameters,
    r_tf: Option<Vec3<f64>>,
) -> Vec<ConstraintStatus> {
    let mut out: Vec<ConstraintStatus> = bcs::inequalities(variant, sc, p)
        .into_iter()
        .map(|c| ConstraintStatus {
            active: c.g_scaled.abs() <= ACTIVE_TOL,
            complementarity: Some(c.multiplier_value * c.g_scaled),
            multiplier: Some(c.multiplier_value),
            name: c.name,
            g: c.g,
            g_scaled: c.g_scaled,
        })
        .collect();
    if variant.has_slack() {
        let cs = &sc.constraints;
        if let (Some(rf), Some(lo), Some(hi), Some(r)) = (sc.r_f, cs.r_min, cs.r_max, r_tf) {
            let dev = r - rf;
            for (ax, axn) in ["x", "y", "z"].iter().enumerate() {
                for (name, g) in [
                    (format!("dev_{axn} <= {}", hi[ax]), dev[ax] - hi[ax]),
                    (format!("dev_{axn} >= {}", lo[ax]), lo[ax] - dev[ax]),
                ] {
                    let gs = g / POS_SCALE;
                    out.push(ConstraintStatus {
                        name,
                        g,
                        g_scaled: gs,
                        multiplier: None,
                        active: gs.abs() <= ACTIVE_TOL,
                        complementarity: None,
                    });
                }
            }
        }
    }
    out
}

/// Full report; violations are reported, never raised. `tol_pos` only
/// decides the log level of a large miss.
pub fn verify(sol: &InterceptionSolution, sc: &Scenario, tol_pos: f64) -> SolutionReport {
    let variant = sol.bvp.variant;
    let p = &sol.params;
    let segs = &sol.solution.mesh.segments;
    let edge = |k: usize| {
        let s = &segs[k];
        s.node(s.n_nodes() - 1)
    };
    let hit_y = edge(variant.impact_segment());
    let interpolant_miss = (Vec3::from_slice(&hit_y[idx::R..]) - Vec3::from_slice(&hit_y[idx::RT..])).norm();
    let interp_tf = variant.has_tail().then(|| Vec3::from_slice(&edge(segs.len() - 1)[idx::R..]));
    let (miss, fin) = match oracle_states(&variant, sc, p) {
        Ok((hit, target, fin)) => ((hit.r - target.r).norm(), fin.map(|s| s.r)),
        Err(e) => {
            log::warn!("oracle propagation failed: {e}");
            (f64::INFINITY, None)
        }
    };
    if miss > tol_pos {
        log::warn!("interception miss {miss:.3e} m above {tol_pos} m");
    }
    let r_tf = fin.or(interp_tf);
    let constraints = constraint_status(&variant, sc, p, r_tf);
    let n_samples = 201;
    SolutionReport {
        scenario: sc.label.clone(),
        variant,
        cost: cost(p),
        instants: p.into(),
        dv1: p.dv1,
        dv2: p.dv2,
        interception_miss: miss,
        interpolant_miss,
        terminal_deviation: sc.r_f.and(fin).map(|r| r - sc.r_f.unwrap_or_default()),
        interpolant_terminal_deviation: sc.r_f.and(interp_tf).map(|r| r - sc.r_f.unwrap_or_default()),
        active_constraints: constraints.iter().filter(|c| c.active).map(|c| c.name.clone()).collect(),
        max_complementarity: constraints.iter().filter_map(|c| c.complementarity).fold(0.0f64, |a, b| a.max(b.abs())),
        constraints,
        lawden: lawden(sol, n_samples),
        hamiltonian: hamiltonian_drift(sol, n_samples),
        multipliers: Multipliers { lambda: p.lambda.clone(), mu: p.mu.clone(), eta: p.eta.clone() },
        max_residual: sol.solution.max_residual,
        bc_residual: sol.solution.bc_residual,
        nodes: sol.solution.mesh.n_nodes(),
        corrections: sol.corrections.clone(),
    }
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub solve: InterceptionOptions,
    /// Impact instant guess of the first row (and of every row when cold).
    pub th_guess: f64,
    /// Start each row from the previous converged row. Rows run in parallel
    /// only when this is off.
    pub warm_start: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { solve: InterceptionOptions::default(), th_guess: 700.0, warm_start: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t1_input: Instant,
    /// Resolved impulse instant, seconds.
    pub t1: Option<f64>,
    pub th: Option<f64>,
    pub cost: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Cost strictly increasing over consecutive converged rows.
    pub monotonic: bool,
}

impl SweepTable {
    pub fn n_converged(&self) -> usize {
        self.rows.iter().filter(|r| r.converged).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t1,th,cost,converged\n");
        let f = |v: Option<f64>| v.map(num).unwrap_or_default();
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", f(r.t1), f(r.th), f(r.cost), r.converged));
        }
        s
    }
}

fn sweep_row(sc: &Scenario, t1: Instant, spec: GuessSpec, opts: &InterceptionOptions) -> (SweepRow, Option<UnknownParameters>) {
    let variant = ProblemVariant::OneImpulseFixedT1 { t1 };
    let fail = |e: String| {
        (SweepRow { t1_input: t1, t1: None, th: None, cost: None, converged: false, error: Some(e) }, None)
    };
    let guess = match build_guess(&variant, sc, &spec) {
        Ok(g) => g,
        Err(e) => return fail(e.to_string()),
    };
    match solve_interception(variant, sc.clone(), guess, opts) {
        Ok(sol) => {
            let p = sol.params;
            let row = SweepRow {
                t1_input: t1,
                t1: Some(p.t1),
                th: Some(p.th),
                cost: Some(p.cost()),
                converged: true,
                error: None,
            };
            (row, Some(p))
        }
        Err(e) => fail(e.to_string()),
    }
}

/// One fixed-instant one-impulse solve per grid point. With warm starts the
/// impact instant and impulse of the previous converged row seed the next,
/// and the impulse is retargeted to the new instant.
pub fn sweep_fixed_impulse(sc: &Scenario, grid: &[Instant], opts: &SweepOptions) -> SweepTable {
    let cold = |t1h: Option<f64>| GuessSpec { t1: t1h, th: Some(opts.th_guess), retarget: true, ..Default::default() };
    let rows: Vec<SweepRow> = if opts.warm_start {
        let mut prev: Option<UnknownParameters> = None;
        let mut rows = Vec::with_capacity(grid.len());
        for &t1 in grid {
            let spec = match &prev {
                Some(p) => GuessSpec { th: Some(p.th), dv1: Some(p.dv1), retarget: true, ..Default::default() },
                None => cold(None),
            };
            let (row, p) = sweep_row(sc, t1, spec, &opts.solve);
            if p.is_some() {
                prev = p;
            }
            rows.push(row);
        }
        rows
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> =
                grid.iter().map(|&t1| s.spawn(move || sweep_row(sc, t1, cold(None), &opts.solve).0)).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        })
    };
    let costs: Vec<f64> = rows.iter().filter_map(|r| r.cost).collect();
    let monotonic = costs.windows(2).all(|w| w[1] > w[0]);
    SweepTable { rows, monotonic }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_of_maps_segments() {
        let inst = [10.0, 30.0];
        assert_eq!(time_of(&inst, 0, 0.0), 0.0);
        assert_eq!(time_of(&inst, 0, 0.5), 10.0);
        assert_eq!(time_of(&inst, 1, 0.75), 20.0);
        assert_eq!(time_of(&inst, 1, 1.0), 30.0);
    }

    #[test]
    fn single_impulse_cost_is_its_norm() {
        let p = UnknownParameters {
            t1: 0.0,
            t2: None,
            th: 1.0,
            tf: None,
            dv1: Vec3::new(3.0, 4.0, 0.0),
            dv2: None,
            lambda: vec![],
            mu: vec![],
            eta: vec![],
        };
        assert_eq!(cost(&p), 5.0);
    }
}
