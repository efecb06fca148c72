//! Two-body state and costate dynamics, Hamiltonians and the slackness
//! augmentation used on the last two segments of the terminal-box problem.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::vec3::{Mat3, Vec3};

pub const MU_EARTH: f64 = 3.986e14;
pub const RE_EARTH: f64 = 6_378_145.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("gravity evaluated at zero radius")]
    ZeroRadius,
    #[error("segment index {0} outside 1..=4")]
    SegmentOutOfRange(usize),
    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GravityModel<T> {
    pub mu: T,
    pub re: T,
}

impl<T: Scalar> GravityModel<T> {
    pub fn earth() -> Self {
        GravityModel { mu: T::lit(MU_EARTH), re: T::lit(RE_EARTH) }
    }
}

impl<T: Scalar> Default for GravityModel<T> {
    fn default() -> Self {
        Self::earth()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CartesianState<T> {
    pub r: Vec3<T>,
    pub v: Vec3<T>,
}

impl<T: Scalar> CartesianState<T> {
    pub fn new(r: Vec3<T>, v: Vec3<T>) -> Self {
        CartesianState { r, v }
    }

    pub fn to_array(&self) -> [T; 6] {
        [self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z]
    }

    pub fn from_slice(s: &[T]) -> Self {
        CartesianState { r: Vec3::from_slice(&s[0..3]), v: Vec3::from_slice(&s[3..6]) }
    }

    pub fn specific_energy(&self, g: &GravityModel<T>) -> T {
        T::lit(0.5) * self.v.norm_squared() - g.mu / self.r.norm()
    }

    pub fn angular_momentum(&self) -> Vec3<T> {
        self.r.cross(&self.v)
    }

    pub fn is_finite(&self) -> bool {
        self.r.is_finite() && self.v.is_finite()
    }
}

/// Adjoint pair of the interceptor. The primer vector is `-p_v`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Costate<T> {
    pub p_r: Vec3<T>,
    pub p_v: Vec3<T>,
}

impl<T: Scalar> Costate<T> {
    pub fn new(p_r: Vec3<T>, p_v: Vec3<T>) -> Self {
        Costate { p_r, p_v }
    }

    pub fn primer(&self) -> Vec3<T> {
        -self.p_v
    }

    pub fn from_slice(s: &[T]) -> Self {
        Costate { p_r: Vec3::from_slice(&s[0..3]), p_v: Vec3::from_slice(&s[3..6]) }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlacknessState<T> {
    pub eps: Vec3<T>,
    pub p_eps: Vec3<T>,
    pub k3: Vec3<T>,
    pub k4: Vec3<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentedDerivative<T> {
    pub state: CartesianState<T>,
    pub costate: Costate<T>,
    pub eps: Vec3<T>,
    pub p_eps: Vec3<T>,
}

fn radius<T: Scalar>(r: &Vec3<T>) -> Result<T, DynamicsError> {
    let rn = r.norm();
    if rn > T::zero() && rn.is_finite() {
        Ok(rn)
    } else {
        Err(DynamicsError::ZeroRadius)
    }
}

pub fn gravity_accel<T: Scalar>(r: &Vec3<T>, g: &GravityModel<T>) -> Result<Vec3<T>, DynamicsError> {
    let rn = radius(r)?;
    Ok(*r * (-g.mu / (rn * rn * rn)))
}

/// `(mu/r^3)(3 r r^T / r^2 - I)`, the Jacobian of the acceleration is its negative.
pub fn gravity_gradient<T: Scalar>(r: &Vec3<T>, g: &GravityModel<T>) -> Result<Mat3<T>, DynamicsError> {
    let rn = radius(r)?;
    let rh = *r / rn;
    let k = g.mu / (rn * rn * rn);
    Ok(Mat3::outer(&rh, &rh).scale(T::lit(3.0)).sub(&Mat3::identity()).scale(k))
}

pub fn two_body_derivative<T: Scalar>(
    s: &CartesianState<T>,
    g: &GravityModel<T>,
) -> Result<CartesianState<T>, DynamicsError> {
    Ok(CartesianState { r: s.v, v: gravity_accel(&s.r, g)? })
}

pub fn costate_derivative<T: Scalar>(
    s: &CartesianState<T>,
    c: &Costate<T>,
    g: &GravityModel<T>,
) -> Result<Costate<T>, DynamicsError> {
    let gg = gravity_gradient(&s.r, g)?;
    Ok(Costate { p_r: -gg.mul_vec(&c.p_v), p_v: -c.p_r })
}

pub fn hamiltonian<T: Scalar>(
    s: &CartesianState<T>,
    c: &Costate<T>,
    g: &GravityModel<T>,
) -> Result<T, DynamicsError> {
    let a = gravity_accel(&s.r, g)?;
    Ok(c.p_r.dot(&s.v) + c.p_v.dot(&a))
}

fn check_segment(segment: usize) -> Result<(), DynamicsError> {
    if (1..=4).contains(&segment) {
        Ok(())
    } else {
        Err(DynamicsError::SegmentOutOfRange(segment))
    }
}

/// Slack rates on one segment: zero on 1-2, `(-p/2, -2 k eps)` on 3-4.
pub fn slack_rates<T: Scalar>(
    segment: usize,
    sl: &SlacknessState<T>,
) -> Result<(Vec3<T>, Vec3<T>), DynamicsError> {
    check_segment(segment)?;
    Ok(match segment {
        1 | 2 => (Vec3::zero(), Vec3::zero()),
        s => {
            let k = if s == 3 { sl.k3 } else { sl.k4 };
            (sl.p_eps * T::lit(-0.5), k.hadamard(&sl.eps) * T::lit(-2.0))
        }
    })
}

pub fn augmented_derivative<T: Scalar>(
    segment: usize,
    s: &CartesianState<T>,
    c: &Costate<T>,
    sl: &SlacknessState<T>,
    g: &GravityModel<T>,
) -> Result<AugmentedDerivative<T>, DynamicsError> {
    let (eps, p_eps) = slack_rates(segment, sl)?;
    Ok(AugmentedDerivative {
        state: two_body_derivative(s, g)?,
        costate: costate_derivative(s, c, g)?,
        eps,
        p_eps,
    })
}

/// Slack contribution `sum(-p^2/4 + k eps^2)` on segments 3-4, zero before.
pub fn slack_hamiltonian_term<T: Scalar>(segment: usize, sl: &SlacknessState<T>) -> Result<T, DynamicsError> {
    check_segment(segment)?;
    if segment < 3 {
        return Ok(T::zero());
    }
    let k = if segment == 3 { sl.k3 } else { sl.k4 };
    let mut acc = T::zero();
    for i in 0..3 {
        acc = acc - T::lit(0.25) * sl.p_eps[i] * sl.p_eps[i] + k[i] * sl.eps[i] * sl.eps[i];
    }
    Ok(acc)
}

pub fn hamiltonian_augmented<T: Scalar>(
    segment: usize,
    s: &CartesianState<T>,
    c: &Costate<T>,
    sl: &SlacknessState<T>,
    g: &GravityModel<T>,
) -> Result<T, DynamicsError> {
    Ok(hamiltonian(s, c, g)? + slack_hamiltonian_term(segment, sl)?)
}

/// Joint 12-vector rate of `[r, v, p_r, p_v]`, as used by the oracle integrator.
pub fn state_costate_rhs<T: Scalar>(y: &[T], g: &GravityModel<T>, out: &mut [T]) -> Result<(), DynamicsError> {
    let s = CartesianState::from_slice(&y[0..6]);
    let c = Costate::from_slice(&y[6..12]);
    let ds = two_body_derivative(&s, g)?;
    let dc = costate_derivative(&s, &c, g)?;
    ds.r.write_to(&mut out[0..3]);
    ds.v.write_to(&mut out[3..6]);
    dc.p_r.write_to(&mut out[6..9]);
    dc.p_v.write_to(&mut out[9..12]);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    type V = Vec3<f64>;

    fn g() -> GravityModel<f64> {
        GravityModel::earth()
    }

    #[test]
    fn axis_aligned_two_body() {
        let r0 = 7.0e6;
        let s = CartesianState::new(V::new(r0, 0.0, 0.0), V::new(0.0, 7500.0, 0.0));
        let d = two_body_derivative(&s, &g()).unwrap();
        assert_eq!(d.r, V::new(0.0, 7500.0, 0.0));
        assert!((d.v.x + MU_EARTH / (r0 * r0)).abs() < 1e-12);
        assert_eq!(d.v.y, 0.0);
        assert_eq!(d.v.z, 0.0);
    }

    #[test]
    fn zero_radius_is_domain_error() {
        let s = CartesianState::new(V::zero(), V::zero());
        assert_eq!(two_body_derivative(&s, &g()), Err(DynamicsError::ZeroRadius));
        assert!(costate_derivative(&s, &Costate::default(), &g()).is_err());
    }

    #[test]
    fn accel_norm_matches_inverse_square() {
        let r = V::new(-5.842891129580837e6, -1.241946037180446e6, 2.562926625347858e6);
        let a = gravity_accel(&r, &g()).unwrap();
        let expect = MU_EARTH / r.norm_squared();
        assert!((a.norm() - expect).abs() / expect < 1e-14);
    }

    #[test]
    fn costate_trivial_cases() {
        let s = CartesianState::new(V::new(7.0e6, 1.0e5, -2.0e5), V::new(1.0, 2.0, 3.0));
        let q = V::new(1e-3, -2e-3, 5e-4);
        let d = costate_derivative(&s, &Costate::new(q, V::zero()), &g()).unwrap();
        assert_eq!(d.p_r, V::zero());
        assert_eq!(d.p_v, -q);

        let r0 = 7.0e6;
        let s = CartesianState::new(V::new(r0, 0.0, 0.0), V::zero());
        let d = costate_derivative(&s, &Costate::new(V::zero(), V::new(1.0, 0.0, 0.0)), &g()).unwrap();
        let expect = -2.0 * MU_EARTH / (r0 * r0 * r0);
        assert!((d.p_r.x - expect).abs() < 1e-12 * expect.abs());
        assert!(d.p_r.y.abs() < 1e-30 && d.p_r.z.abs() < 1e-30);
    }

    #[test]
    fn hamiltonian_trivial_cases() {
        let s = CartesianState::new(V::new(7.0e6, 1.0e5, -2.0e5), V::new(10.0, -20.0, 30.0));
        assert_eq!(hamiltonian(&s, &Costate::default(), &g()).unwrap(), 0.0);
        let h = hamiltonian(&s, &Costate::new(s.v, V::zero()), &g()).unwrap();
        assert!((h - s.v.norm_squared()).abs() < 1e-9);
    }

    #[test]
    fn slack_branches() {
        let mut sl = SlacknessState::<f64> {
            eps: V::new(1.0, 0.0, 0.0),
            p_eps: V::new(3.0, 4.0, 5.0),
            k3: V::new(1.0, 1.0, 1.0),
            k4: V::new(1.0, 1.0, 1.0),
        };
        let (e, p) = slack_rates(1, &sl).unwrap();
        assert_eq!((e, p), (V::zero(), V::zero()));
        sl.p_eps = V::zero();
        let (e, p) = slack_rates(3, &sl).unwrap();
        assert_eq!(p, V::new(-2.0, 0.0, 0.0));
        assert_eq!(e, V::zero());
        sl.p_eps = V::new(2.0, 0.0, 0.0);
        let (e, _) = slack_rates(4, &sl).unwrap();
        assert_eq!(e, V::new(-1.0, 0.0, 0.0));
        assert_eq!(slack_rates(5, &sl), Err(DynamicsError::SegmentOutOfRange(5)));
        assert!(slack_rates(0, &sl).is_err());
    }

    #[test]
    fn augmented_hamiltonian_terms() {
        let s = CartesianState::new(V::new(7.0e6, 1.0e5, -2.0e5), V::new(10.0, -20.0, 30.0));
        let c = Costate::new(V::new(1e-3, 0.0, 2e-3), V::new(0.1, -0.2, 0.3));
        let h = hamiltonian(&s, &c, &g()).unwrap();
        let one = V::new(1.0, 1.0, 1.0);
        let sl = SlacknessState { eps: V::zero(), p_eps: V::new(1.0, 0.0, 0.0), k3: one, k4: one };
        assert_eq!(hamiltonian_augmented(1, &s, &c, &sl, &g()).unwrap(), h);
        let d3 = hamiltonian_augmented(3, &s, &c, &sl, &g()).unwrap() - h;
        assert!((d3 + 0.25).abs() < 1e-12);
        let sl = SlacknessState { eps: one, p_eps: V::zero(), k3: one, k4: one };
        let d4 = hamiltonian_augmented(4, &s, &c, &sl, &g()).unwrap() - h;
        assert!((d4 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn generic_over_f32() {
        let g32 = GravityModel::<f32>::earth();
        let s = CartesianState::new(Vec3::new(7.0e6f32, 0.0, 0.0), Vec3::new(0.0, 7.5e3, 0.0));
        let d = two_body_derivative(&s, &g32).unwrap();
        assert!((d.v.x + 3.986e14f32 / 4.9e13).abs() < 1e-4);
    }
}
