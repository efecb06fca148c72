//! Interception necessary conditions as a [`SegmentedBvp`].

use crate::bcs::{self, idx, BoundaryData, ProblemVariant, TimeParam, UnknownParameters, SLACK_DIM};
use crate::dynamics::{gravity_accel, gravity_gradient};
use crate::mpbvp::{solve, BvpError, Edges, EvalError, MeshFunction, SegmentedBvp, Solution, SolveOptions};
use crate::scenarios::Scenario;
use crate::timechange::TimeMap;
use crate::vec3::Vec3;

#[derive(Clone, Debug)]
pub struct InterceptionBvp {
    pub variant: ProblemVariant,
    pub scenario: Scenario,
    labels: Vec<String>,
    param_scales: Vec<f64>,
}

impl InterceptionBvp {
    pub fn new(variant: ProblemVariant, scenario: Scenario) -> Self {
        let labels = placeholder_labels(&variant, &scenario);
        InterceptionBvp { param_scales: bcs::param_scales(&variant), variant, scenario, labels }
    }

    /// Segment end instants from raw parameters, without allocating.
    fn instants(&self, p: &[f64]) -> [f64; 4] {
        let tps = self.variant.time_params();
        let get = |want: TimeParam| tps.iter().position(|&t| t == want).map(|i| p[i]);
        let end = get(TimeParam::Tf).or(get(TimeParam::Th)).unwrap_or(0.0);
        let th = get(TimeParam::Th).unwrap_or_else(|| get(TimeParam::TauH).unwrap_or(1.0) * end);
        let t1 = match self.variant {
            ProblemVariant::OneImpulseFixedT1 { t1 } => t1.resolve(th),
            ProblemVariant::TwoImpulseFirstAtT0 => 0.0,
            _ => get(TimeParam::Tau1).unwrap_or(0.0) * end,
        };
        let mut out = [0.0; 4];
        let mut k = 0;
        out[k] = t1;
        k += 1;
        if self.variant.n_impulses() == 2 {
            out[k] = get(TimeParam::Tau2).unwrap_or(0.0) * end;
            k += 1;
        }
        out[k] = th;
        k += 1;
        if self.variant.has_tail() {
            out[k] = end;
        }
        out
    }

    /// `dt/ds` on segment `seg`.
    pub fn time_factor(&self, seg: usize, p: &[f64]) -> f64 {
        let t = self.instants(p);
        let start = if seg == 0 { 0.0 } else { t[seg - 1] };
        self.variant.n_segments() as f64 * (t[seg] - start)
    }

    pub fn time_map(&self, p: &[f64]) -> Result<TimeMap<f64>, crate::timechange::TimeChangeError> {
        let t = self.instants(p);
        TimeMap::new(0.0, t[..self.variant.n_segments()].to_vec())
    }

    pub fn unknowns(&self, p: &[f64]) -> Result<UnknownParameters, bcs::BcError> {
        UnknownParameters::unpack(&self.variant, p)
    }
}

fn placeholder_labels(variant: &ProblemVariant, sc: &Scenario) -> Vec<String> {
    // labels do not depend on values, so any well-formed point will do
    let bd = BoundaryData {
        segments: (0..variant.n_segments())
            .map(|k| {
                let e = bcs::EdgeValues::from_slice(&vec![1.0; variant.segment_dim(k)]);
                (e, e)
            })
            .collect(),
    };
    let two = variant.n_impulses() == 2;
    let p = UnknownParameters {
        t1: 0.0,
        t2: two.then_some(0.0),
        th: 1.0,
        tf: variant.has_tail().then_some(1.0),
        dv1: Vec3::new(1.0, 0.0, 0.0),
        dv2: two.then(|| Vec3::new(1.0, 0.0, 0.0)),
        lambda: vec![0.0; variant.n_lambda()],
        mu: vec![0.0; variant.n_mu()],
        eta: vec![0.0; variant.n_eta()],
    };
    let mut sc = sc.clone();
    sc.r_f.get_or_insert(Vec3::zero());
    sc.constraints.r_min.get_or_insert(Vec3::zero());
    sc.constraints.r_max.get_or_insert(Vec3::zero());
    match bcs::labelled_residuals(variant, &bd, &p, &sc) {
        Ok(rows) => rows.into_iter().map(|(i, _)| i.label).collect(),
        Err(_) => (0..bcs::n_residuals(variant)).map(|i| format!("bc[{i}]")).collect(),
    }
}

impl SegmentedBvp for InterceptionBvp {
    fn n_segments(&self) -> usize {
        self.variant.n_segments()
    }

    fn dim(&self, seg: usize) -> usize {
        self.variant.segment_dim(seg)
    }

    fn n_params(&self) -> usize {
        self.variant.n_params()
    }

    fn n_bc(&self) -> usize {
        bcs::n_residuals(&self.variant)
    }

    fn rhs(&self, seg: usize, _s: f64, y: &[f64], p: &[f64], dy: &mut [f64]) -> Result<(), EvalError> {
        let c = self.time_factor(seg, p);
        let g = &self.scenario.gravity;
        let v3 = |o: usize| Vec3::from_slice(&y[o..o + 3]);
        let err = |e: crate::dynamics::DynamicsError| EvalError(e.to_string());
        let r = v3(idx::R);
        let a = gravity_accel(&r, g).map_err(err)?;
        let gg = gravity_gradient(&r, g).map_err(err)?;
        let dpr = -gg.mul_vec(&v3(idx::PV));
        let dpv = -v3(idx::PR);
        let at = gravity_accel(&v3(idx::RT), g).map_err(err)?;
        (v3(idx::V) * c).write_to(&mut dy[idx::R..idx::R + 3]);
        (a * c).write_to(&mut dy[idx::V..idx::V + 3]);
        (dpr * c).write_to(&mut dy[idx::PR..idx::PR + 3]);
        (dpv * c).write_to(&mut dy[idx::PV..idx::PV + 3]);
        (v3(idx::VT) * c).write_to(&mut dy[idx::RT..idx::RT + 3]);
        (at * c).write_to(&mut dy[idx::VT..idx::VT + 3]);
        if y.len() == SLACK_DIM {
            let cs = &self.scenario.constraints;
            let k: Vec3<f64> = if seg == 2 { cs.k3 } else { cs.k4 };
            (v3(idx::PEPS) * (-0.5 * c)).write_to(&mut dy[idx::EPS..idx::EPS + 3]);
            (k.hadamard(&v3(idx::EPS)) * (-2.0 * c)).write_to(&mut dy[idx::PEPS..idx::PEPS + 3]);
        }
        Ok(())
    }

    fn bc(&self, edges: &[Edges<'_>], p: &[f64], res: &mut [f64]) -> Result<(), EvalError> {
        let up = self.unknowns(p).map_err(|e| EvalError(e.to_string()))?;
        let bd = BoundaryData::from_edges(edges);
        let r = bcs::residuals(&self.variant, &bd, &up, &self.scenario).map_err(|e| EvalError(e.to_string()))?;
        res.copy_from_slice(&r);
        Ok(())
    }

    fn y_scale(&self, _seg: usize, i: usize) -> f64 {
        bcs::component_scale(i)
    }

    fn param_scale(&self, i: usize) -> f64 {
        self.param_scales[i]
    }

    fn rhs_uses_param(&self, _seg: usize, i: usize) -> bool {
        i < self.variant.time_params().len()
    }

    fn bc_label(&self, i: usize) -> String {
        self.labels.get(i).cloned().unwrap_or_else(|| format!("bc[{i}]"))
    }
}

/// Driver options on top of the collocation solver.
#[derive(Clone, Debug)]
pub struct InterceptionOptions {
    pub solve: SolveOptions,
    /// Active-set corrections allowed after a converged solve.
    pub max_corrections: usize,
    /// A multiplier below `-sign_tol` at an active inequality is released.
    pub sign_tol: f64,
    /// A scaled inequality value above this counts as violated.
    pub feasibility_tol: f64,
}

impl Default for InterceptionOptions {
    fn default() -> Self {
        InterceptionOptions { solve: SolveOptions::default(), max_corrections: 8, sign_tol: 1e-6, feasibility_tol: 1e-6 }
    }
}

impl InterceptionOptions {
    pub fn with_tol(tol: f64) -> Self {
        InterceptionOptions { solve: SolveOptions::with_tol(tol), ..Default::default() }
    }
}

#[derive(Clone, Debug)]
pub struct InterceptionSolution {
    pub bvp: InterceptionBvp,
    pub params: UnknownParameters,
    pub solution: Solution,
    /// One note per active-set correction.
    pub corrections: Vec<String>,
}

/// Next active-set move at a converged point: violated inequalities are put on
/// their boundary with a unit multiplier; otherwise the most negative active
/// multiplier is zeroed and its constraint moved slightly inside.
fn active_set_correction(
    variant: &ProblemVariant,
    sc: &Scenario,
    up: &UnknownParameters,
    opts: &InterceptionOptions,
) -> Option<(String, UnknownParameters)> {
    let ineq = bcs::inequalities(variant, sc, up);
    let mut q = up.clone();
    let violated: Vec<_> = ineq.iter().filter(|c| c.g_scaled > opts.feasibility_tol).collect();
    if !violated.is_empty() {
        let mut note = Vec::new();
        for c in violated {
            bcs::project_onto(variant, sc, &mut q, c.multiplier);
            bcs::set_multiplier(&mut q, c.multiplier, 1.0);
            note.push(format!("{} violated by {:.3e}", c.name, c.g));
        }
        return Some((note.join(", "), q));
    }
    let worst = ineq
        .iter()
        .filter(|c| c.multiplier_value < -opts.sign_tol)
        .min_by(|a, b| a.multiplier_value.total_cmp(&b.multiplier_value))?;
    bcs::set_multiplier(&mut q, worst.multiplier, 0.0);
    bcs::project_onto(variant, sc, &mut q, worst.multiplier);
    // step inside by 1 s or 1 m/s
    match worst.multiplier {
        bcs::Multiplier::Lambda(j) => match (variant, j) {
            (ProblemVariant::OneImpulseFree, _) | (_, 0) => q.t1 += 1.0,
            (_, 1) => q.t1 -= 1.0,
            (_, 2) => q.t2 = q.t2.map(|t| t + 1.0),
            _ => q.t2 = q.t2.map(|t| t - 1.0),
        },
        bcs::Multiplier::Mu(j) => {
            let (ax, upper) = ((j % 6) / 2, j % 2 == 0);
            let dv = if j < 6 { Some(&mut q.dv1) } else { q.dv2.as_mut() };
            if let Some(dv) = dv {
                dv[ax] += if upper { -1.0 } else { 1.0 };
            }
        }
    }
    Some((format!("{} released (multiplier {:.3e})", worst.name, worst.multiplier_value), q))
}

/// Solve one variant from a prepared mesh. The equations leave multiplier
/// signs free, so a converged point can violate an inequality whose
/// multiplier went to zero, or sit on a bound with a negative multiplier;
/// either case triggers a re-solve from the corrected point, up to
/// `opts.max_corrections` times.
pub fn solve_interception(
    variant: ProblemVariant,
    scenario: Scenario,
    guess: MeshFunction,
    opts: &InterceptionOptions,
) -> Result<InterceptionSolution, BvpError> {
    let bvp = InterceptionBvp::new(variant, scenario);
    let mut mesh = guess;
    let mut corrections = Vec::new();
    loop {
        let sol = solve(&bvp, mesh, &opts.solve)?;
        let up = bvp.unknowns(sol.params()).map_err(|e| BvpError::Dimension(e.to_string()))?;
        if corrections.len() < opts.max_corrections {
            if let Some((note, q)) = active_set_correction(&variant, &bvp.scenario, &up, opts) {
                log::info!("active-set correction: {note}");
                corrections.push(note);
                mesh = sol.mesh;
                mesh.params = q.pack(&variant).map_err(|e| BvpError::Dimension(e.to_string()))?;
                continue;
            }
        }
        return Ok(InterceptionSolution { bvp, params: up, solution: sol, corrections });
    }
}
