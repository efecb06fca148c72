//! Multipoint BVP solver with unknown parameters: 3-stage Lobatto IIIA
//! collocation per segment, damped Newton on the global system and
//! residual-controlled mesh refinement.
//!
//! Segment `k` of `n` lives on `s in [k/n, (k+1)/n]` and may have its own
//! dimension. The boundary function sees the values at both edges of every
//! segment plus the parameter vector.

mod collocation;
pub mod linsolve;
mod mesh;
mod newton;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use collocation::{collocation_residual, jacobian, residual, GlobalJacobian};
pub use mesh::refine_mesh;
pub use newton::{newton_solve, NewtonReport};

/// Failure of a right-hand side or boundary evaluation (e.g. gravity at r = 0).
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct EvalError(pub String);

pub trait SegmentedBvp {
    fn n_segments(&self) -> usize;
    fn dim(&self, seg: usize) -> usize;
    fn n_params(&self) -> usize;
    fn n_bc(&self) -> usize;

    /// `dy/ds` on segment `seg`, already multiplied by the time-change factor.
    fn rhs(&self, seg: usize, s: f64, y: &[f64], p: &[f64], dy: &mut [f64]) -> Result<(), EvalError>;

    /// Boundary and interface rows; `edges[k]` holds both ends of segment `k`.
    fn bc(&self, edges: &[Edges<'_>], p: &[f64], res: &mut [f64]) -> Result<(), EvalError>;

    /// Typical magnitude of component `i` on segment `seg`, used to scale
    /// collocation rows, residual estimates and difference steps.
    fn y_scale(&self, _seg: usize, _i: usize) -> f64 {
        1.0
    }

    fn param_scale(&self, _i: usize) -> f64 {
        1.0
    }

    /// Whether the right-hand side of `seg` reads parameter `i`.
    fn rhs_uses_param(&self, _seg: usize, _i: usize) -> bool {
        true
    }

    fn bc_label(&self, i: usize) -> String {
        format!("bc[{i}]")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Edges<'a> {
    pub left: &'a [f64],
    pub right: &'a [f64],
}

/// Node values of one segment, stored node-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMesh {
    pub dim: usize,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
}

impl SegmentMesh {
    pub fn n_nodes(&self) -> usize {
        self.s.len()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.y[j * self.dim..(j + 1) * self.dim]
    }

    pub fn node_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.y[j * self.dim..(j + 1) * self.dim]
    }

    pub fn uniform(dim: usize, a: f64, b: f64, n_nodes: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let s: Vec<f64> = (0..n_nodes)
            .map(|j| if j + 1 == n_nodes { b } else { a + (b - a) * j as f64 / (n_nodes - 1) as f64 })
            .collect();
        let mut y = Vec::with_capacity(dim * n_nodes);
        for &sj in &s {
            let v = f(sj);
            assert_eq!(v.len(), dim, "guess dimension");
            y.extend(v);
        }
        SegmentMesh { dim, s, y }
    }
}

/// Piecewise mesh function plus parameters: what Newton iterates on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshFunction {
    pub segments: Vec<SegmentMesh>,
    pub params: Vec<f64>,
}

impl MeshFunction {
    pub fn n_unknowns(&self) -> usize {
        self.segments.iter().map(|s| s.y.len()).sum::<usize>() + self.params.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.segments.iter().map(|s| s.n_nodes()).sum()
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_unknowns());
        for seg in &self.segments {
            x.extend_from_slice(&seg.y);
        }
        x.extend_from_slice(&self.params);
        x
    }

    pub fn unpack(&mut self, x: &[f64]) {
        let mut o = 0;
        for seg in &mut self.segments {
            let n = seg.y.len();
            seg.y.copy_from_slice(&x[o..o + n]);
            o += n;
        }
        self.params.copy_from_slice(&x[o..]);
    }

    pub fn edges(&self) -> Vec<Edges<'_>> {
        self.segments
            .iter()
            .map(|seg| Edges { left: seg.node(0), right: seg.node(seg.n_nodes() - 1) })
            .collect()
    }
}

/// Converged collocation solution with node derivatives kept for the C1 cubic interpolant.
#[derive(Clone, Debug)]
pub struct Solution {
    pub mesh: MeshFunction,
    pub yp: Vec<Vec<f64>>,
    pub max_residual: f64,
    pub bc_residual: f64,
    pub newton_iterations: usize,
    pub mesh_refinements: usize,
    pub estimates: Vec<Vec<f64>>,
}

impl Solution {
    pub fn params(&self) -> &[f64] {
        &self.mesh.params
    }

    /// Rebuild the interpolant and residual figures of a stored mesh, without
    /// any Newton steps.
    pub fn from_mesh(bvp: &dyn SegmentedBvp, mesh: MeshFunction) -> Result<Solution, BvpError> {
        check_dims(bvp, &mesh)?;
        let yp = collocation::node_derivatives(bvp, &mesh)?;
        let estimates = collocation::estimates_with(bvp, &mesh, &yp)?;
        let max_residual = estimates.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        let r = residual(bvp, &mesh)?;
        let bc_residual = r[r.len() - bvp.n_bc()..].iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        Ok(Solution { mesh, yp, max_residual, bc_residual, newton_iterations: 0, mesh_refinements: 0, estimates })
    }

    /// Cubic Hermite value and derivative on segment `seg` at `s`.
    pub fn eval(&self, seg: usize, s: f64) -> (Vec<f64>, Vec<f64>) {
        collocation::hermite_eval(&self.mesh.segments[seg], &self.yp[seg], s)
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    /// Newton stops once the scaled residual sup-norm drops below this.
    pub newton_tol: Option<f64>,
    pub max_newton: usize,
    pub damping_floor: f64,
    pub max_refinements: usize,
    pub max_nodes: usize,
    /// Pairs of neighbouring subintervals whose estimates are both below this are merged.
    pub merge_below: Option<f64>,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-9,
            newton_tol: None,
            max_newton: 50,
            damping_floor: 1e-8,
            max_refinements: 40,
            max_nodes: 60_000,
            merge_below: None,
            verbose: false,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolveOptions { tol, ..Default::default() }
    }

    pub fn effective_newton_tol(&self) -> f64 {
        self.newton_tol.unwrap_or((self.tol * 1e-2).max(1e-13))
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceFailure {
    pub reason: String,
    pub iterations: usize,
    pub residual_norm: f64,
    pub worst_row: usize,
    pub last: MeshFunction,
    pub residual: Vec<f64>,
}

#[derive(Debug, Error, Clone)]
pub enum BvpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Newton failed after {} iterations: {} (|F| = {:.3e}, worst row {})",
        .0.iterations, .0.reason, .0.residual_norm, .0.worst_row)]
    Convergence(Box<ConvergenceFailure>),
    #[error("mesh would need {nodes} points, limit is {limit}")]
    MeshLimit { nodes: usize, limit: usize },
    #[error("non-finite Jacobian entry at row {row}, column {col}")]
    NonFiniteJacobian { row: usize, col: usize },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

fn check_dims(bvp: &dyn SegmentedBvp, guess: &MeshFunction) -> Result<(), BvpError> {
    let n = bvp.n_segments();
    if guess.segments.len() != n {
        return Err(BvpError::Dimension(format!("{} guess segments for {n} segments", guess.segments.len())));
    }
    if guess.params.len() != bvp.n_params() {
        return Err(BvpError::Dimension(format!(
            "{} guess parameters, problem has {}",
            guess.params.len(),
            bvp.n_params()
        )));
    }
    let mut dof = bvp.n_params();
    for (k, seg) in guess.segments.iter().enumerate() {
        if seg.dim != bvp.dim(k) || seg.y.len() != seg.dim * seg.n_nodes() || seg.n_nodes() < 2 {
            return Err(BvpError::Dimension(format!("segment {k} guess malformed")));
        }
        let (a, b) = (k as f64 / n as f64, (k + 1) as f64 / n as f64);
        if (seg.s[0] - a).abs() > 1e-14 || (seg.s[seg.n_nodes() - 1] - b).abs() > 1e-14 {
            return Err(BvpError::Dimension(format!("segment {k} mesh does not span [{a}, {b}]")));
        }
        if seg.s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(BvpError::Dimension(format!("segment {k} mesh not strictly increasing")));
        }
        dof += seg.dim;
    }
    if dof != bvp.n_bc() {
        return Err(BvpError::Dimension(format!(
            "{} boundary rows for {} boundary degrees of freedom",
            bvp.n_bc(),
            dof
        )));
    }
    Ok(())
}

/// Solve to `opts.tol`: Newton on the current mesh, then refine until every
/// subinterval estimate is within tolerance.
pub fn solve(bvp: &dyn SegmentedBvp, guess: MeshFunction, opts: &SolveOptions) -> Result<Solution, BvpError> {
    check_dims(bvp, &guess)?;
    let mut mesh = guess;
    let n = bvp.n_segments();
    // endpoints exactly on the breakpoints
    for (k, seg) in mesh.segments.iter_mut().enumerate() {
        let last = seg.n_nodes() - 1;
        seg.s[0] = k as f64 / n as f64;
        seg.s[last] = (k + 1) as f64 / n as f64;
    }
    let mut total_iters = 0;
    let mut refinements = 0;
    loop {
        let rep = newton_solve(bvp, &mut mesh, opts)?;
        total_iters += rep.iterations;
        let yp = collocation::node_derivatives(bvp, &mesh)?;
        let est = collocation::estimates_with(bvp, &mesh, &yp)?;
        let max_est = est.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        if opts.verbose {
            log::info!(
                "mesh {} nodes: newton {} its, |F| {:.2e}, max residual {:.3e}",
                mesh.n_nodes(),
                rep.iterations,
                rep.residual_norm,
                max_est
            );
        }
        if max_est <= opts.tol {
            return Ok(Solution {
                mesh,
                yp,
                max_residual: max_est,
                bc_residual: rep.bc_norm,
                newton_iterations: total_iters,
                mesh_refinements: refinements,
                estimates: est,
            });
        }
        if refinements >= opts.max_refinements {
            return Err(BvpError::Convergence(Box::new(ConvergenceFailure {
                reason: format!("residual {max_est:.3e} above tolerance after {refinements} refinements"),
                iterations: total_iters,
                residual_norm: rep.residual_norm,
                worst_row: 0,
                last: mesh,
                residual: Vec::new(),
            })));
        }
        mesh = mesh::refine_with(&mesh, &yp, &est, opts)?;
        refinements += 1;
    }
}
