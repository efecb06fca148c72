//! Dormand-Prince 5(4) integrator with PI step control. It is only used to
//! cross-check and export trajectories and to seed guesses; the collocation
//! residual never calls it.

use crate::dynamics::{
    state_costate_rhs, two_body_derivative, CartesianState, Costate, DynamicsError, GravityModel,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct RkOptions<T> {
    pub rtol: T,
    pub atol: T,
    pub max_steps: usize,
}

impl<T: Scalar> Default for RkOptions<T> {
    fn default() -> Self {
        RkOptions { rtol: T::lit(1e-12), atol: T::lit(1e-9), max_steps: 1_000_000 }
    }
}

impl<T: Scalar> RkOptions<T> {
    /// `rtol = tol`, `atol = 1e3 tol`, the pairing of the default 1e-12/1e-9.
    pub fn with_tol(tol: T) -> Self {
        RkOptions { rtol: tol, atol: tol * T::lit(1e3), ..Default::default() }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights are the last row of A; E = b5 - b4
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `y' = f(t, y)` from `t0` to each of `t_out` (monotone in the
/// direction of integration), landing exactly on every output time.
pub fn integrate_to<T, F>(
    mut f: F,
    t0: T,
    y0: &[T],
    t_out: &[T],
    opts: &RkOptions<T>,
) -> Result<Vec<Vec<T>>, DynamicsError>
where
    T: Scalar,
    F: FnMut(T, &[T], &mut [T]) -> Result<(), DynamicsError>,
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut out = Vec::with_capacity(t_out.len());
    let mut k: Vec<Vec<T>> = vec![vec![T::zero(); n]; 7];
    let mut ytmp = vec![T::zero(); n];
    let mut ynew = vec![T::zero(); n];
    let mut h_prev_ok: Option<T> = None;
    let mut err_prev = T::lit(1e-4);
    let mut steps = 0usize;
    let mut have_k0 = false;

    let lit = T::lit;
    for &target in t_out {
        let span = target - t;
        if span == T::zero() {
            out.push(y.clone());
            continue;
        }
        let dir = span.signum();
        if !have_k0 {
            f(t, &y, &mut k[0])?;
            have_k0 = true;
        }
        let mut h = match h_prev_ok {
            Some(h) => h.abs(),
            None => initial_step(&y, &k[0], opts, span.abs()),
        };
        loop {
            let rem = (target - t).abs();
            if rem <= lit(8.0) * T::epsilon() * t.abs().max(target.abs()).max(T::one()) {
                t = target;
                break;
            }
            let last = h >= rem;
            let hs = if last { rem } else { h } * dir;
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = T::zero();
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc = acc + lit(A[s][j]) * kj[i];
                    }
                    ytmp[i] = y[i] + hs * acc;
                }
                f(t + lit(C[s]) * hs, &ytmp, &mut k[s])?;
            }
            // stage 7 is evaluated at the fifth-order solution (FSAL)
            ynew.copy_from_slice(&ytmp);
            let mut err = T::zero();
            for i in 0..n {
                let mut e = T::zero();
                for (j, kj) in k.iter().enumerate() {
                    e = e + lit(E[j]) * kj[i];
                }
                let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
                let r = hs * e / sc;
                err = err + r * r;
            }
            err = (err / lit(n as f64)).sqrt();
            steps += 1;
            if steps > opts.max_steps {
                return Err(DynamicsError::IntegrationFailure {
                    t: t.to_f64_lossy(),
                    reason: "step limit exceeded".into(),
                });
            }
            if !err.is_finite() {
                h = h * lit(0.25);
            } else if err <= T::one() {
                t = if last { target } else { t + hs };
                y.copy_from_slice(&ynew);
                let (first, rest) = k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                let errc = err.max(lit(1e-10));
                let fac = lit(0.9) * errc.powf(lit(-0.17)) * err_prev.powf(lit(0.04));
                let fac = fac.max(lit(0.2)).min(lit(10.0));
                err_prev = errc;
                h = h * fac;
                h_prev_ok = Some(h);
                if last {
                    break;
                }
            } else {
                let fac = (lit(0.9) * err.powf(lit(-0.2))).max(lit(0.2));
                h = h * fac;
            }
            if h <= lit(16.0) * T::epsilon() * t.abs().max(T::one()) {
                return Err(DynamicsError::IntegrationFailure {
                    t: t.to_f64_lossy(),
                    reason: "step size underflow".into(),
                });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn initial_step<T: Scalar>(y: &[T], f0: &[T], opts: &RkOptions<T>, span: T) -> T {
    let mut d0 = T::zero();
    let mut d1 = T::zero();
    for (yi, fi) in y.iter().zip(f0) {
        let sc = opts.atol + opts.rtol * yi.abs();
        d0 = d0 + (*yi / sc) * (*yi / sc);
        d1 = d1 + (*fi / sc) * (*fi / sc);
    }
    let h = if d0 < T::lit(1e-10) || d1 < T::lit(1e-10) {
        T::lit(1e-6)
    } else {
        T::lit(0.01) * (d0 / d1).sqrt()
    };
    h.min(span)
}

/// Two-body propagation of one vehicle by `duration` seconds (negative runs backwards).
pub fn propagate<T: Scalar>(
    s0: &CartesianState<T>,
    duration: T,
    g: &GravityModel<T>,
    tol: T,
) -> Result<CartesianState<T>, DynamicsError> {
    if duration == T::zero() {
        return Ok(*s0);
    }
    let opts = RkOptions::with_tol(tol);
    let out = integrate_to(
        |_, y, dy| {
            let d = two_body_derivative(&CartesianState::from_slice(y), g)?;
            d.r.write_to(&mut dy[0..3]);
            d.v.write_to(&mut dy[3..6]);
            Ok(())
        },
        T::zero(),
        &s0.to_array(),
        &[duration],
        &opts,
    )?;
    Ok(CartesianState::from_slice(&out[0]))
}

/// Sample a two-body arc at the given offsets from the initial epoch.
pub fn propagate_samples<T: Scalar>(
    s0: &CartesianState<T>,
    offsets: &[T],
    g: &GravityModel<T>,
    opts: &RkOptions<T>,
) -> Result<Vec<CartesianState<T>>, DynamicsError> {
    let out = integrate_to(
        |_, y, dy| {
            let d = two_body_derivative(&CartesianState::from_slice(y), g)?;
            d.r.write_to(&mut dy[0..3]);
            d.v.write_to(&mut dy[3..6]);
            Ok(())
        },
        T::zero(),
        &s0.to_array(),
        offsets,
        opts,
    )?;
    Ok(out.iter().map(|y| CartesianState::from_slice(y)).collect())
}

/// Joint state and costate propagation, sampled at the given offsets.
pub fn propagate_with_costate<T: Scalar>(
    s0: &CartesianState<T>,
    c0: &Costate<T>,
    offsets: &[T],
    g: &GravityModel<T>,
    opts: &RkOptions<T>,
) -> Result<Vec<(CartesianState<T>, Costate<T>)>, DynamicsError> {
    let mut y0 = [T::zero(); 12];
    y0[0..6].copy_from_slice(&s0.to_array());
    c0.p_r.write_to(&mut y0[6..9]);
    c0.p_v.write_to(&mut y0[9..12]);
    let out = integrate_to(|_, y, dy| state_costate_rhs(y, g, dy), T::zero(), &y0, offsets, opts)?;
    Ok(out
        .iter()
        .map(|y| (CartesianState::from_slice(&y[0..6]), Costate::from_slice(&y[6..12])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{hamiltonian, MU_EARTH};
    use crate::vec3::Vec3;

    type V = Vec3<f64>;

    #[test]
    fn zero_duration_is_identity() {
        let s = CartesianState::new(V::new(7e6, 1.0, 2.0), V::new(3.0, 7e3, 4.0));
        assert_eq!(propagate(&s, 0.0, &GravityModel::earth(), 1e-12).unwrap(), s);
    }

    #[test]
    fn circular_orbit_closes() {
        let r0 = 7.0e6;
        let w = (MU_EARTH / r0).sqrt();
        let s = CartesianState::new(V::new(r0, 0.0, 0.0), V::new(0.0, w, 0.0));
        let period = 2.0 * std::f64::consts::PI * (r0 * r0 * r0 / MU_EARTH).sqrt();
        let e = propagate(&s, period, &GravityModel::earth(), 1e-12).unwrap();
        assert!((e.r - s.r).norm() / r0 < 1e-9, "{:?}", e.r - s.r);
        assert!((e.v - s.v).norm() / w < 1e-9);
    }

    #[test]
    fn elliptic_kepler_period() {
        let g = GravityModel::earth();
        let rp = 6.8e6;
        let ecc = 0.3;
        let a = rp / (1.0 - ecc);
        let vp = (MU_EARTH * (1.0 + ecc) / rp).sqrt();
        let s = CartesianState::new(V::new(rp, 0.0, 0.0), V::new(0.0, vp * 0.6, vp * 0.8));
        let period = 2.0 * std::f64::consts::PI * (a * a * a / MU_EARTH).sqrt();
        let e = propagate(&s, period, &g, 1e-12).unwrap();
        assert!((e.r - s.r).norm() / s.r.norm() < 1e-6);
        assert!((e.v - s.v).norm() / s.v.norm() < 1e-6);
    }

    #[test]
    fn backward_propagation_inverts_forward() {
        let g = GravityModel::earth();
        let s = CartesianState::new(V::new(-1.39e6, -5.68e6, -2.83e6), V::new(-4511.0, -2680.0, 4446.0));
        let f = propagate(&s, 500.0, &g, 1e-12).unwrap();
        let b = propagate(&f, -500.0, &g, 1e-12).unwrap();
        assert!((b.r - s.r).norm() < 1e-4);
    }

    #[test]
    fn lands_exactly_on_sample_times() {
        let g = GravityModel::earth();
        let s = CartesianState::new(V::new(7e6, 0.0, 0.0), V::new(0.0, 7.5e3, 0.0));
        let offs = [0.0, 10.0, 10.0, 250.0, 700.0];
        let out = propagate_samples(&s, &offs, &g, &RkOptions::default()).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out[0], s);
        assert_eq!(out[1], out[2]);
        let direct = propagate(&s, 700.0, &g, 1e-12).unwrap();
        assert!((direct.r - out[4].r).norm() < 1e-3);
    }

    #[test]
    fn hamiltonian_conserved_along_joint_arc() {
        let g = GravityModel::earth();
        let s = CartesianState::new(V::new(-5.84e6, -1.24e6, 2.56e6), V::new(-65.5, -7322.0, -2081.0));
        let c = Costate::new(V::new(5.4e-4, -4.7e-4, 8.5e-4), V::new(0.49, -0.44, 0.76));
        let opts = RkOptions::with_tol(1e-10);
        let offs: Vec<f64> = (0..=10).map(|i| 10.0 * i as f64).collect();
        let out = propagate_with_costate(&s, &c, &offs, &g, &opts).unwrap();
        let h0 = hamiltonian(&s, &c, &g).unwrap();
        for (si, ci) in &out {
            let h = hamiltonian(si, ci, &g).unwrap();
            assert!(((h - h0) / h0).abs() <= 1e-8, "{h} vs {h0}");
        }
    }
}
