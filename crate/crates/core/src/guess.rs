//! Initial meshes for the collocation solver.
//!
//! States come from propagating both vehicles through the guessed impulses.
//! Costates are either propagated from a supplied `(p_r, p_v)(t0)` or fitted
//! by least squares to the primer conditions along the guessed trajectory,
//! which is exact for a single impulse without a tail arc.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bcs::{self, idx, Event, ProblemVariant, UnknownParameters, POS_SCALE, PR_SCALE};
use crate::dynamics::{gravity_accel, gravity_gradient, CartesianState, DynamicsError};
use crate::mpbvp::linsolve::{damped_lstsq, Entry};
use crate::mpbvp::{MeshFunction, SegmentMesh};
use crate::oracle::{integrate_to, propagate, RkOptions};
use crate::scenarios::Scenario;
use crate::vec3::Vec3;

pub const DEFAULT_NODES: usize = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuessError {
    #[error("guess for variant {0} lacks {1}")]
    Missing(ProblemVariant, &'static str),
    #[error("guess instants are not ordered: {0:?}")]
    Order(Vec<f64>),
    #[error("propagation failed: {0}")]
    Propagation(#[from] DynamicsError),
    #[error("retargeting did not converge (miss {0:.3e} m)")]
    Retarget(f64),
    #[error("{0}")]
    Bc(#[from] bcs::BcError),
    #[error("costate fit failed: {0}")]
    CostateFit(String),
}

/// User-facing guess, every instant in seconds from t0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuessSpec {
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub th: Option<f64>,
    pub tf: Option<f64>,
    pub dv1: Option<Vec3<f64>>,
    pub dv2: Option<Vec3<f64>>,
    /// `(p_r, p_v)` at t0.
    pub costate0: Option<(Vec3<f64>, Vec3<f64>)>,
    pub lambda: Option<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    /// Adjust the last impulse before impact so the guessed arcs intercept.
    pub retarget: bool,
    pub nodes_per_segment: Option<usize>,
}

/// Node times of a segment, uniform in the normalized time.
fn node_times(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|j| a + (b - a) * j as f64 / (n - 1) as f64).collect()
}

fn solve3(m: &[[f64; 3]; 3], b: &Vec3<f64>) -> Option<Vec3<f64>> {
    let c0 = Vec3::new(m[0][0], m[1][0], m[2][0]);
    let c1 = Vec3::new(m[0][1], m[1][1], m[2][1]);
    let c2 = Vec3::new(m[0][2], m[1][2], m[2][2]);
    let det = c0.dot(&c1.cross(&c2));
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(Vec3::new(b.dot(&c1.cross(&c2)), c0.dot(&b.cross(&c2)), c0.dot(&c1.cross(b))) / det)
}

/// State after coasting from `s` at `ta` to `tb` with impulse `dv` applied at `ta`.
fn after_impulse(s: &CartesianState<f64>, dv: Vec3<f64>, dur: f64, sc: &Scenario) -> Result<CartesianState<f64>, DynamicsError> {
    propagate(&CartesianState::new(s.r, s.v + dv), dur, &sc.gravity, 1e-12)
}

/// Newton shooting on the impulse applied at `t_imp` so that the interceptor
/// coasting from `s_imp` reaches `r_goal` after `dur` seconds.
pub fn retarget_impulse(
    s_imp: &CartesianState<f64>,
    dv0: Vec3<f64>,
    dur: f64,
    r_goal: Vec3<f64>,
    sc: &Scenario,
) -> Result<Vec3<f64>, GuessError> {
    let mut dv = dv0;
    let mut miss = f64::INFINITY;
    for _ in 0..30 {
        let e = after_impulse(s_imp, dv, dur, sc)?.r - r_goal;
        miss = e.norm();
        if miss < 1e-6 {
            return Ok(dv);
        }
        let mut m = [[0.0; 3]; 3];
        let h = 1e-3;
        for j in 0..3 {
            let mut d = dv;
            d[j] += h;
            let ej = after_impulse(s_imp, d, dur, sc)?.r - r_goal;
            for i in 0..3 {
                m[i][j] = (ej[i] - e[i]) / h;
            }
        }
        let step = solve3(&m, &e).ok_or(GuessError::Retarget(miss))?;
        // keep the step moderate so the arc does not swing through the Earth
        let lim = 2000.0;
        let sn = step.norm();
        dv -= if sn > lim { step * (lim / sn) } else { step };
    }
    Err(GuessError::Retarget(miss))
}

/// Linear costate transition `[p_r, p_v]' = [[0, -G], [-I, 0]] [p_r, p_v]` along
/// a coasting arc, integrated with the state. Returns the states and the 6x6
/// transition matrices (row-major) at `offsets`.
fn costate_transition(
    s0: &CartesianState<f64>,
    offsets: &[f64],
    sc: &Scenario,
) -> Result<Vec<(CartesianState<f64>, [f64; 36])>, DynamicsError> {
    let mut y0 = vec![0.0; 42];
    y0[..6].copy_from_slice(&s0.to_array());
    for i in 0..6 {
        y0[6 + 7 * i] = 1.0;
    }
    let g = sc.gravity;
    let out = if offsets.iter().all(|&t| t == 0.0) {
        vec![y0.clone(); offsets.len()]
    } else {
        integrate_to(
            |_, y, dy| {
                let r = Vec3::from_slice(&y[0..3]);
                let a = gravity_accel(&r, &g)?;
                let gg = gravity_gradient(&r, &g)?;
                dy[0..3].copy_from_slice(&y[3..6]);
                a.write_to(&mut dy[3..6]);
                for c in 0..6 {
                    let pv = Vec3::new(y[6 + 3 * 6 + c], y[6 + 4 * 6 + c], y[6 + 5 * 6 + c]);
                    let dpr = -gg.mul_vec(&pv);
                    for i in 0..3 {
                        dy[6 + i * 6 + c] = dpr[i];
                        dy[6 + (3 + i) * 6 + c] = -y[6 + i * 6 + c];
                    }
                }
                Ok(())
            },
            0.0,
            &y0,
            offsets,
            &RkOptions::default(),
        )?
    };
    Ok(out
        .into_iter()
        .map(|y| {
            let mut m = [0.0; 36];
            m.copy_from_slice(&y[6..42]);
            (CartesianState::from_slice(&y[..6]), m)
        })
        .collect())
}

fn mat_mul(a: &[f64; 36], b: &[f64; 36]) -> [f64; 36] {
    let mut c = [0.0; 36];
    for i in 0..6 {
        for k in 0..6 {
            let aik = a[i * 6 + k];
            for j in 0..6 {
                c[i * 6 + j] += aik * b[k * 6 + j];
            }
        }
    }
    c
}

/// Everything sampled along the guessed trajectory.
struct Sampled {
    interceptor: Vec<Vec<CartesianState<f64>>>,
    target: Vec<Vec<CartesianState<f64>>>,
    /// Cumulative transition from t0 (or from t_h on the tail arc).
    phi: Vec<Vec<[f64; 36]>>,
}

fn sample(
    variant: &ProblemVariant,
    sc: &Scenario,
    up: &UnknownParameters,
    n: usize,
) -> Result<Sampled, GuessError> {
    let inst = up.instants(variant);
    let events = variant.events();
    let dvs = up.impulses();
    let mut s = sc.interceptor0;
    let mut tgt = sc.target0;
    let mut phi_acc = ident();
    let mut out = Sampled { interceptor: vec![], target: vec![], phi: vec![] };
    let mut start = 0.0;
    for (k, &end) in inst.iter().enumerate() {
        let offs: Vec<f64> = node_times(0.0, end - start, n);
        let tr = costate_transition(&s, &offs, sc)?;
        let tt = crate::oracle::propagate_samples(&tgt, &offs, &sc.gravity, &RkOptions::default())?;
        out.interceptor.push(tr.iter().map(|x| x.0).collect());
        out.phi.push(tr.iter().map(|x| mat_mul(&x.1, &phi_acc)).collect());
        out.target.push(tt.clone());
        s = tr[n - 1].0;
        tgt = tt[n - 1];
        phi_acc = mat_mul(&tr[n - 1].1, &phi_acc);
        match events[k] {
            Event::Impulse(i) => s.v += dvs[i],
            Event::Impact => phi_acc = ident(),
            Event::Final => {}
        }
        start = end;
    }
    Ok(out)
}

fn ident() -> [f64; 36] {
    let mut m = [0.0; 36];
    for i in 0..6 {
        m[i * 7] = 1.0;
    }
    m
}

fn apply(m: &[f64; 36], c: &[f64; 6]) -> [f64; 6] {
    let mut o = [0.0; 6];
    for i in 0..6 {
        o[i] = (0..6).map(|j| m[i * 6 + j] * c[j]).sum();
    }
    o
}

/// Costate along the trajectory when `c0` holds `p(t0)` and `jump` the
/// `p_r` discontinuity at impact.
fn costate_at(variant: &ProblemVariant, smp: &Sampled, c0: &[f64; 6], jump: &Vec3<f64>, k: usize, j: usize) -> [f64; 6] {
    let ki = variant.impact_segment();
    if k <= ki {
        apply(&smp.phi[k][j], c0)
    } else {
        let mut ph = apply(&smp.phi[ki].last().copied().unwrap_or_else(ident), c0);
        for i in 0..3 {
            ph[i] += jump[i];
        }
        apply(&smp.phi[k][j], &ph)
    }
}

/// Least-squares fit of `p(t0)` and the impact jump to the primer conditions
/// `p_v(t_i) = -dv_i/|dv_i|` and `p_v(end) = 0`, in costate units.
fn fit_costate(
    variant: &ProblemVariant,
    smp: &Sampled,
    up: &UnknownParameters,
    fixed_c0: Option<[f64; 6]>,
) -> Result<([f64; 6], Vec3<f64>), GuessError> {
    let n_unknown = if fixed_c0.is_some() { 0 } else { 6 } + if variant.has_tail() { 3 } else { 0 };
    if n_unknown == 0 {
        return Ok((fixed_c0.unwrap_or_default(), Vec3::zero()));
    }
    let scale: Vec<f64> = (0..n_unknown)
        .map(|i| if fixed_c0.is_none() && (3..6).contains(&i) { 1.0 } else { PR_SCALE })
        .collect();
    // unit responses: column c of the map from (scaled) unknowns to the rows
    let rows_at = |z: &[f64]| -> Vec<f64> {
        let (c0, jump) = match fixed_c0 {
            Some(c) => (c, if z.is_empty() { Vec3::zero() } else { Vec3::from_slice(&z[0..3]) }),
            None => {
                let mut c = [0.0; 6];
                c.copy_from_slice(&z[0..6]);
                (c, if z.len() > 6 { Vec3::from_slice(&z[6..9]) } else { Vec3::zero() })
            }
        };
        let mut r = Vec::new();
        for (i, dv) in up.impulses().iter().enumerate() {
            let p = costate_at(variant, smp, &c0, &jump, i, smp.phi[i].len() - 1);
            let u = *dv / dv.norm().max(bcs::DV_GUARD);
            r.extend([p[3] + u.x, p[4] + u.y, p[5] + u.z]);
        }
        let last = smp.phi.len() - 1;
        let p = costate_at(variant, smp, &c0, &jump, last, smp.phi[last].len() - 1);
        r.extend([p[3], p[4], p[5]]);
        r
    };
    let z0 = vec![0.0; n_unknown];
    let r0 = rows_at(&z0);
    let mut entries: Vec<Entry> = Vec::new();
    for c in 0..n_unknown {
        let mut z = z0.clone();
        z[c] = scale[c];
        let rc = rows_at(&z);
        for (i, (a, b)) in rc.iter().zip(&r0).enumerate() {
            entries.push(Entry::new(i, c, a - b));
        }
    }
    let rhs: Vec<f64> = r0.iter().map(|v| -v).collect();
    let w = damped_lstsq(r0.len(), n_unknown, &entries, &rhs, 1e-12, &vec![1.0; n_unknown])
        .map_err(|e| GuessError::CostateFit(format!("{e:?}")))?;
    let z: Vec<f64> = w.iter().zip(&scale).map(|(a, s)| a * s).collect();
    Ok(match fixed_c0 {
        Some(c) => (c, Vec3::from_slice(&z[0..3])),
        None => {
            let mut c = [0.0; 6];
            c.copy_from_slice(&z[0..6]);
            (c, if z.len() > 6 { Vec3::from_slice(&z[6..9]) } else { Vec3::zero() })
        }
    })
}

/// Resolve missing instants and impulses, optionally retargeting.
pub fn resolve_parameters(
    variant: &ProblemVariant,
    sc: &Scenario,
    spec: &GuessSpec,
) -> Result<UnknownParameters, GuessError> {
    let th = spec.th.ok_or(GuessError::Missing(*variant, "th"))?;
    let t1 = match variant {
        ProblemVariant::OneImpulseFixedT1 { t1 } => t1.resolve(th),
        ProblemVariant::TwoImpulseFirstAtT0 => 0.0,
        _ => spec.t1.ok_or(GuessError::Missing(*variant, "t1"))?,
    };
    let two = variant.n_impulses() == 2;
    let t2 = if two { Some(spec.t2.ok_or(GuessError::Missing(*variant, "t2"))?) } else { None };
    let tf = if variant.has_tail() { Some(spec.tf.ok_or(GuessError::Missing(*variant, "tf"))?) } else { None };
    let mut up = UnknownParameters {
        t1,
        t2,
        th,
        tf,
        dv1: spec.dv1.unwrap_or_default(),
        dv2: if two { Some(spec.dv2.unwrap_or_default()) } else { None },
        lambda: vec![],
        mu: vec![],
        eta: vec![],
    };
    let inst = up.instants(variant);
    if inst.windows(2).any(|w| w[1] < w[0]) || inst[0] < 0.0 {
        return Err(GuessError::Order(inst));
    }
    let last_imp = variant.n_impulses() - 1;
    let t_last = up.impulse_times()[last_imp];
    let need_retarget = spec.retarget || up.impulses()[last_imp].norm() == 0.0;
    if need_retarget {
        // state just before the last impulse
        let mut s = sc.interceptor0;
        let mut t = 0.0;
        for (i, (&ti, dv)) in up.impulse_times().iter().zip(up.impulses()).enumerate() {
            s = propagate(&s, ti - t, &sc.gravity, 1e-12)?;
            t = ti;
            if i < last_imp {
                s.v += dv;
            }
        }
        let goal = propagate(&sc.target0, th, &sc.gravity, 1e-12)?.r;
        let mut dv0 = up.impulses()[last_imp];
        if dv0.norm() == 0.0 {
            let coast = propagate(&s, th - t_last, &sc.gravity, 1e-12)?.r;
            dv0 = (goal - coast) / (th - t_last).max(1.0);
        }
        let dv = retarget_impulse(&s, dv0, th - t_last, goal, sc)?;
        if last_imp == 0 {
            up.dv1 = dv;
        } else {
            up.dv2 = Some(dv);
        }
    }
    for (i, dv) in up.impulses().iter().enumerate() {
        if dv.norm() == 0.0 {
            return Err(bcs::BcError::DegenerateImpulse(i + 1).into());
        }
    }
    Ok(up)
}

/// Initial mesh with `nodes_per_segment` equispaced nodes on every segment.
pub fn build_guess(variant: &ProblemVariant, sc: &Scenario, spec: &GuessSpec) -> Result<MeshFunction, GuessError> {
    let mut up = resolve_parameters(variant, sc, spec)?;
    let n = spec.nodes_per_segment.unwrap_or(DEFAULT_NODES).max(2);
    let smp = sample(variant, sc, &up, n)?;
    let fixed = spec.costate0.map(|(pr, pv)| [pr.x, pr.y, pr.z, pv.x, pv.y, pv.z]);
    let (c0, jump) = fit_costate(variant, &smp, &up, fixed)?;

    // multipliers
    let pr_at = |k: usize| {
        let p = costate_at(variant, &smp, &c0, &jump, k, n - 1);
        Vec3::new(p[0], p[1], p[2])
    };
    let cs = &sc.constraints;
    up.lambda = match (&spec.lambda, variant) {
        (Some(l), _) => l.clone(),
        (None, ProblemVariant::OneImpulseFree) => vec![-pr_at(0).dot(&up.dv1)],
        (None, _) => {
            let present = [cs.alpha.is_some(), cs.beta.is_some(), cs.gamma.is_some(), cs.eta.is_some()];
            present[..variant.n_lambda()].iter().map(|&p| if p { 1.0 } else { 0.0 }).collect()
        }
    };
    up.mu = match &spec.mu {
        Some(m) => m.clone(),
        None => {
            let mut m = Vec::new();
            if variant.n_mu() > 0 {
                for b in [cs.dv1_box, cs.dv2_box] {
                    m.extend([if b.is_some() { 1.0 } else { 0.0 }; 6]);
                }
            }
            m
        }
    };

    // slack layer profiles and their multipliers
    let ki = variant.impact_segment();
    let inst = up.instants(variant);
    let mut eps_h = Vec3::zero();
    let mut sqrt_k = Vec3::zero();
    if variant.has_slack() {
        let rf = sc.r_f.ok_or(GuessError::Missing(*variant, "scenario r_f"))?;
        let rmin = cs.r_min.ok_or(GuessError::Missing(*variant, "scenario r_min"))?;
        let r_end = smp.interceptor.last().and_then(|v| v.last()).map(|s| s.r).unwrap_or_default();
        let dev = r_end - rf;
        for i in 0..3 {
            eps_h[i] = (dev[i] - rmin[i]).max(1.0).sqrt();
            sqrt_k[i] = cs.k3[i].max(0.0).sqrt();
        }
        up.eta = match &spec.eta {
            Some(e) => e.clone(),
            None => {
                let mut e = vec![0.0; 6];
                for i in 0..3 {
                    e[2 * i + 1] = -2.0 * sqrt_k[i];
                    e[2 * i] = r_end[i] + e[2 * i + 1];
                }
                e
            }
        };
    }

    let mut segments = Vec::with_capacity(variant.n_segments());
    let n_seg = variant.n_segments();
    for k in 0..n_seg {
        let dim = variant.segment_dim(k);
        let (a, b) = (k as f64 / n_seg as f64, (k + 1) as f64 / n_seg as f64);
        let start = if k == 0 { 0.0 } else { inst[k - 1] };
        let times = node_times(start, inst[k], n);
        let mut y = Vec::with_capacity(n * dim);
        for j in 0..n {
            let mut row = vec![0.0; dim];
            let s = smp.interceptor[k][j];
            let t = smp.target[k][j];
            let p = costate_at(variant, &smp, &c0, &jump, k, j);
            s.r.write_to(&mut row[idx::R..]);
            s.v.write_to(&mut row[idx::V..]);
            row[idx::PR..idx::PR + 6].copy_from_slice(&p);
            t.r.write_to(&mut row[idx::RT..]);
            t.v.write_to(&mut row[idx::VT..]);
            if dim == bcs::SLACK_DIM {
                let th = inst[ki];
                for i in 0..3 {
                    // grows into t_h on segment 3, decays after it on segment 4
                    let (e, pe) = if k == ki {
                        let e = eps_h[i] * (sqrt_k[i] * (times[j] - th)).exp();
                        (e, -2.0 * sqrt_k[i] * e)
                    } else {
                        let e = eps_h[i] * (-sqrt_k[i] * (times[j] - th)).exp();
                        (e, 2.0 * sqrt_k[i] * e)
                    };
                    row[idx::EPS + i] = e;
                    row[idx::PEPS + i] = pe;
                }
            }
            y.extend(row);
        }
        let mut seg = SegmentMesh { dim, s: node_times(a, b, n), y };
        seg.s[0] = a;
        seg.s[n - 1] = b;
        segments.push(seg);
    }
    Ok(MeshFunction { segments, params: up.pack(variant)? })
}

/// Shift the unknown constants of an existing mesh; states are kept, which is
/// what a continuation step wants.
pub fn warm_start(prev: &MeshFunction, variant: &ProblemVariant, params: &UnknownParameters) -> Result<MeshFunction, GuessError> {
    let mut m = prev.clone();
    m.params = params.pack(variant)?;
    Ok(m)
}

/// Scale for reporting the guessed position miss.
pub fn miss_distance(mesh: &MeshFunction, variant: &ProblemVariant) -> f64 {
    let seg = &mesh.segments[variant.impact_segment()];
    let y = seg.node(seg.n_nodes() - 1);
    (Vec3::from_slice(&y[idx::R..]) - Vec3::from_slice(&y[idx::RT..])).norm() / POS_SCALE
}
