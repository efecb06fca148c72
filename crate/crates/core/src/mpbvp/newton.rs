use super::collocation::{jacobian, residual, Layout};
use super::linsolve::{damped_lstsq, lu_solve};
use super::{BvpError, ConvergenceFailure, MeshFunction, SegmentedBvp, SolveOptions};

#[derive(Clone, Debug)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual_norm: f64,
    pub bc_norm: f64,
    pub lm_steps: usize,
    /// `|F|^2 / 2` after every accepted step, starting with the initial iterate.
    pub merit_history: Vec<f64>,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

fn merit(v: &[f64]) -> f64 {
    0.5 * v.iter().map(|x| x * x).sum::<f64>()
}

fn worst(v: &[f64]) -> usize {
    let mut w = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[w].abs() || !x.is_finite() {
            w = i;
            if !x.is_finite() {
                break;
            }
        }
    }
    w
}

fn unknown_scales(bvp: &dyn SegmentedBvp, mesh: &MeshFunction) -> Vec<f64> {
    let mut d = Vec::with_capacity(mesh.n_unknowns());
    for (k, seg) in mesh.segments.iter().enumerate() {
        let sc: Vec<f64> = (0..seg.dim).map(|i| bvp.y_scale(k, i)).collect();
        for _ in 0..seg.n_nodes() {
            d.extend_from_slice(&sc);
        }
    }
    d.extend((0..mesh.params.len()).map(|i| bvp.param_scale(i)));
    d
}

struct Trial {
    x: Vec<f64>,
    f: Vec<f64>,
    alpha: f64,
}

fn eval_at(bvp: &dyn SegmentedBvp, work: &mut MeshFunction, x: &[f64]) -> Option<Vec<f64>> {
    work.unpack(x);
    match residual(bvp, work) {
        Ok(f) if f.iter().all(|v| v.is_finite()) => Some(f),
        _ => None,
    }
}

/// Armijo backtracking on `|F|^2 / 2` along `dx`.
fn line_search(
    bvp: &dyn SegmentedBvp,
    work: &mut MeshFunction,
    x: &[f64],
    f: &[f64],
    dx: &[f64],
    floor: f64,
) -> Option<Trial> {
    let phi0 = merit(f);
    let mut alpha = 1.0;
    while alpha >= floor {
        let xt: Vec<f64> = x.iter().zip(dx).map(|(a, b)| a + alpha * b).collect();
        if let Some(ft) = eval_at(bvp, work, &xt) {
            let phi = merit(&ft);
            if phi <= (1.0 - 2e-4 * alpha) * phi0 {
                return Some(Trial { x: xt, f: ft, alpha });
            }
            // safeguarded quadratic model of the merit along the ray
            let q = alpha * alpha * phi0 / (phi - phi0 + 2.0 * alpha * phi0);
            alpha = q.clamp(0.1 * alpha, 0.5 * alpha);
        } else {
            alpha *= 0.25;
        }
    }
    None
}

/// Damped Newton on the current mesh; `mesh` is updated in place.
pub fn newton_solve(
    bvp: &dyn SegmentedBvp,
    mesh: &mut MeshFunction,
    opts: &SolveOptions,
) -> Result<NewtonReport, BvpError> {
    let ftol = opts.effective_newton_tol();
    let lay = Layout::new(mesh);
    let scales = unknown_scales(bvp, mesh);
    let mut work = mesh.clone();
    let mut x = mesh.pack();
    let mut f = residual(bvp, mesh)?;
    let mut lm_steps = 0;
    let mut history = vec![merit(&f)];
    let fail = |reason: String, it: usize, x: &[f64], f: &[f64], mesh: &MeshFunction| {
        let mut last = mesh.clone();
        last.unpack(x);
        BvpError::Convergence(Box::new(ConvergenceFailure {
            reason,
            iterations: it,
            residual_norm: sup(f),
            worst_row: worst(f),
            last,
            residual: f.to_vec(),
        }))
    };
    if !f.iter().all(|v| v.is_finite()) {
        return Err(fail("non-finite residual at the initial guess".into(), 0, &x, &f, mesh));
    }
    for it in 0..=opts.max_newton {
        let nf = sup(&f);
        if nf <= ftol {
            mesh.unpack(&x);
            return Ok(NewtonReport {
                iterations: it,
                residual_norm: nf,
                bc_norm: sup(&f[lay.bc_row..]),
                lm_steps,
                merit_history: history,
            });
        }
        if it == opts.max_newton {
            break;
        }
        work.unpack(&x);
        let jac = jacobian(bvp, &work)?;
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let mut trial = None;
        if let Ok(dx) = lu_solve(lay.n, &jac.entries, &rhs) {
            trial = line_search(bvp, &mut work, &x, &f, &dx, opts.damping_floor);
        }
        // a heavily damped Newton step hints at a nearly singular Jacobian,
        // where Levenberg-Marquardt directions in scaled unknowns do better
        if trial.as_ref().is_none_or(|t| t.alpha < 0.5) {
            let diag: Vec<f64> = scales.iter().map(|s| 1.0 / s).collect();
            for mu in [1e-10, 1e-7, 1e-4, 1e-1, 1e2] {
                let m = mu * (2.0 * merit(&f)).max(1e-30).sqrt().min(1.0);
                if let Ok(dx) = damped_lstsq(jac.n_rows, jac.n_cols, &jac.entries, &rhs, m, &diag) {
                    if let Some(lm) = line_search(bvp, &mut work, &x, &f, &dx, opts.damping_floor) {
                        if trial.as_ref().is_none_or(|t| merit(&lm.f) < merit(&t.f)) {
                            trial = Some(lm);
                            lm_steps += 1;
                        }
                        break;
                    }
                }
            }
        }
        let Some(t) = trial else {
            return Err(fail("damping floor reached without decrease".into(), it, &x, &f, mesh));
        };
        let stalled = t.alpha == 1.0 && sup(&t.f) > 0.9 * nf && sup(&t.f) <= 1e3 * ftol;
        x = t.x;
        f = t.f;
        history.push(merit(&f));
        if opts.verbose {
            log::debug!("newton {it}: |F| {:.3e} -> {:.3e} (alpha {:.2e})", nf, sup(&f), t.alpha);
        }
        if stalled {
            // roundoff floor of the residual reached
            mesh.unpack(&x);
            return Ok(NewtonReport {
                iterations: it + 1,
                residual_norm: sup(&f),
                bc_norm: sup(&f[lay.bc_row..]),
                lm_steps,
                merit_history: history,
            });
        }
    }
    Err(fail(format!("no convergence in {} iterations", opts.max_newton), opts.max_newton, &x, &f, mesh))
}
