//! Initial data, orbital-element conversion and constraint sets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{CartesianState, GravityModel};
use crate::scalar::Scalar;
use crate::vec3::{Mat3, Vec3};

pub const ATMOSPHERE_HEIGHT: f64 = 120_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("unknown initial data set `{0}` (expected I, II or III)")]
    UnknownDataSet(String),
    #[error("orbit geometry invalid: {0}")]
    InvalidGeometry(String),
    #[error("trajectory never crosses the atmosphere boundary ascending")]
    NoAtmosphereCrossing,
    #[error("{vehicle} starts below the atmosphere (|r| = {radius} m)")]
    BelowAtmosphere { vehicle: &'static str, radius: f64 },
    #[error("constraint set invalid: {0}")]
    InvalidConstraints(String),
}

/// Classical elements with `h_alt` the apogee altitude: `a (1 + e) = Re + h_alt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitElements<T> {
    #[serde(rename = "H")]
    pub h_alt: T,
    pub i: T,
    #[serde(rename = "Omega")]
    pub raan: T,
    pub e: T,
    #[serde(rename = "omega")]
    pub argp: T,
    #[serde(default)]
    pub theta: T,
}

impl<T: Scalar> OrbitElements<T> {
    pub fn semi_major_axis(&self, g: &GravityModel<T>) -> T {
        (g.re + self.h_alt) / (T::one() + self.e)
    }

    pub fn semi_latus_rectum(&self, g: &GravityModel<T>) -> T {
        self.semi_major_axis(g) * (T::one() - self.e * self.e)
    }

    pub fn perigee_radius(&self, g: &GravityModel<T>) -> T {
        self.semi_major_axis(g) * (T::one() - self.e)
    }

    fn perifocal_to_inertial(&self) -> Mat3<T> {
        Mat3::rot_z(self.raan).mul_mat(&Mat3::rot_x(self.i)).mul_mat(&Mat3::rot_z(self.argp))
    }
}

/// Perifocal state at `theta` rotated by the 3-1-3 sequence (Omega, i, omega).
pub fn elements_to_state<T: Scalar>(
    el: &OrbitElements<T>,
    g: &GravityModel<T>,
) -> Result<CartesianState<T>, ScenarioError> {
    if !(el.e >= T::zero() && el.e < T::one()) {
        return Err(ScenarioError::InvalidGeometry(format!("eccentricity {} not in [0, 1)", el.e)));
    }
    let p = el.semi_latus_rectum(g);
    if !(p > T::zero()) {
        return Err(ScenarioError::InvalidGeometry("non-positive semi-latus rectum".into()));
    }
    let (s, c) = el.theta.sin_cos();
    let rad = p / (T::one() + el.e * c);
    let h = (g.mu * p).sqrt();
    let rp = Vec3::new(rad * c, rad * s, T::zero());
    let vp = Vec3::new(-s, el.e + c, T::zero()) * (g.mu / h);
    let q = el.perifocal_to_inertial();
    Ok(CartesianState::new(q.mul_vec(&rp), q.mul_vec(&vp)))
}

fn wrap_angle<T: Scalar>(a: T) -> T {
    let two_pi = T::TAU();
    let w = a % two_pi;
    if w < T::zero() {
        w + two_pi
    } else {
        w
    }
}

/// Inverse of [`elements_to_state`] for bound, inclined, non-circular orbits.
pub fn state_to_elements<T: Scalar>(
    s: &CartesianState<T>,
    g: &GravityModel<T>,
) -> Result<OrbitElements<T>, ScenarioError> {
    let r = s.r.norm();
    let v2 = s.v.norm_squared();
    let hv = s.r.cross(&s.v);
    let hn = hv.norm();
    let energy = T::lit(0.5) * v2 - g.mu / r;
    if !(energy < T::zero()) || hn == T::zero() {
        return Err(ScenarioError::InvalidGeometry("orbit is not a bound ellipse".into()));
    }
    let a = -g.mu / (T::lit(2.0) * energy);
    let ev = (s.r * (v2 - g.mu / r) - s.v * s.r.dot(&s.v)) / g.mu;
    let e = ev.norm();
    let i = (hv.z / hn).max(-T::one()).min(T::one()).acos();
    let node = Vec3::new(-hv.y, hv.x, T::zero());
    let nn = node.norm();
    if nn == T::zero() || e == T::zero() {
        return Err(ScenarioError::InvalidGeometry("node line or apse line undefined".into()));
    }
    let raan = wrap_angle(node.y.atan2(node.x));
    let mut argp = (node.dot(&ev) / (nn * e)).max(-T::one()).min(T::one()).acos();
    if ev.z < T::zero() {
        argp = T::TAU() - argp;
    }
    let mut theta = (ev.dot(&s.r) / (e * r)).max(-T::one()).min(T::one()).acos();
    if s.r.dot(&s.v) < T::zero() {
        theta = T::TAU() - theta;
    }
    Ok(OrbitElements { h_alt: a * (T::one() + e) - g.re, i, raan, e, argp, theta })
}

/// State where the conic first climbs through `Re + 120 km`.
pub fn atmosphere_exit_state<T: Scalar>(
    el: &OrbitElements<T>,
    g: &GravityModel<T>,
) -> Result<CartesianState<T>, ScenarioError> {
    let boundary = g.re + T::lit(ATMOSPHERE_HEIGHT);
    let p = el.semi_latus_rectum(g);
    if el.e <= T::zero() {
        return Err(ScenarioError::NoAtmosphereCrossing);
    }
    let c = (p / boundary - T::one()) / el.e;
    if !(c.abs() < T::one()) {
        return Err(ScenarioError::NoAtmosphereCrossing);
    }
    // ascending branch has positive radial velocity, i.e. sin(theta) > 0
    let theta = c.acos();
    elements_to_state(&OrbitElements { theta, ..*el }, g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataSet {
    I,
    II,
    III,
}

impl FromStr for DataSet {
    type Err = ScenarioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "I" | "1" => Ok(DataSet::I),
            "II" | "2" => Ok(DataSet::II),
            "III" | "3" => Ok(DataSet::III),
            other => Err(ScenarioError::UnknownDataSet(other.to_string())),
        }
    }
}

impl fmt::Display for DataSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DataSet::I => "I",
            DataSet::II => "II",
            DataSet::III => "III",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: Vec3<f64>,
    pub max: Vec3<f64>,
}

impl Box3 {
    pub fn symmetric(half: f64) -> Self {
        Box3 { min: Vec3::new(-half, -half, -half), max: Vec3::new(half, half, half) }
    }
}

fn ones() -> Vec3<f64> {
    Vec3::new(1.0, 1.0, 1.0)
}

/// Time windows, impulse boxes and terminal box of the constrained variants.
/// Every entry is optional; the variant decides which ones it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSet {
    /// `t1 >= alpha`
    #[serde(default)]
    pub alpha: Option<f64>,
    /// `t1 <= beta`
    #[serde(default)]
    pub beta: Option<f64>,
    /// `t2 - t1 >= gamma`
    #[serde(default)]
    pub gamma: Option<f64>,
    /// `th - t2 >= eta`
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub dv1_box: Option<Box3>,
    #[serde(default)]
    pub dv2_box: Option<Box3>,
    #[serde(default)]
    pub r_min: Option<Vec3<f64>>,
    #[serde(default)]
    pub r_max: Option<Vec3<f64>>,
    #[serde(default = "ones")]
    pub k3: Vec3<f64>,
    #[serde(default = "ones")]
    pub k4: Vec3<f64>,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        ConstraintSet {
            alpha: None,
            beta: None,
            gamma: None,
            eta: None,
            dv1_box: None,
            dv2_box: None,
            r_min: None,
            r_max: None,
            k3: ones(),
            k4: ones(),
        }
    }
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidConstraints(m));
        if let (Some(a), Some(b)) = (self.alpha, self.beta) {
            if a > b {
                return bad(format!("alpha {a} > beta {b}"));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("eta", self.eta)] {
            if let Some(v) = v {
                if v < 0.0 {
                    return bad(format!("{name} = {v} is negative"));
                }
            }
        }
        for (name, b) in [("dv1_box", self.dv1_box), ("dv2_box", self.dv2_box)] {
            if let Some(b) = b {
                for i in 0..3 {
                    if b.min[i] > b.max[i] {
                        return bad(format!("{name} axis {i}: min > max"));
                    }
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.r_min, self.r_max) {
            for i in 0..3 {
                if lo[i] > hi[i] {
                    return bad(format!("terminal box axis {i}: min > max"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub label: String,
    pub gravity: GravityModel<f64>,
    pub interceptor0: CartesianState<f64>,
    pub target0: CartesianState<f64>,
    pub r_f: Option<Vec3<f64>>,
    pub constraints: ConstraintSet,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let floor = self.gravity.re + ATMOSPHERE_HEIGHT;
        // tolerate the rounding of the printed data by a millimetre
        for (vehicle, s) in [("interceptor", &self.interceptor0), ("target", &self.target0)] {
            let radius = s.r.norm();
            if !(radius >= floor - 1e-3) || !s.is_finite() {
                return Err(ScenarioError::BelowAtmosphere { vehicle, radius });
            }
        }
        if !(self.gravity.mu > 0.0 && self.gravity.re > 0.0) {
            return Err(ScenarioError::InvalidGeometry("mu and Re must be positive".into()));
        }
        self.constraints.validate()
    }

    /// Same scenario seen in a frame rotated by `m` (vectors mapped `x -> m x`).
    pub fn rotated(&self, m: &Mat3<f64>) -> Scenario {
        let rot = |s: &CartesianState<f64>| CartesianState::new(m.mul_vec(&s.r), m.mul_vec(&s.v));
        Scenario {
            label: format!("{} (rotated)", self.label),
            interceptor0: rot(&self.interceptor0),
            target0: rot(&self.target0),
            r_f: self.r_f.map(|r| m.mul_vec(&r)),
            ..self.clone()
        }
    }
}

fn v(s: f64, x: f64, y: f64, z: f64) -> Vec3<f64> {
    Vec3::new(s * x, s * y, s * z)
}

const R_F: [f64; 3] = [-4.4528, -4.4166, 1.7258];

pub fn load_initial_data(id: DataSet) -> Scenario {
    let (rt, vt, rm, vm, rf) = match id {
        DataSet::I => (
            v(1e6, -5.842891129580837, -1.241946037180446, 2.562926625347858),
            v(1e3, -0.065508668182581, -7.322759468283627, -2.081144241020925),
            v(1e6, -1.392985266715916, -5.682521353135304, -2.831729949288823),
            v(1e3, -4.511678481085538, -2.680368719222989, 4.446250319272038),
            Some(v(1e6, R_F[0], R_F[1], R_F[2])),
        ),
        DataSet::II => (
            v(1e6, -5.842481237484495, -1.389922138771051, 2.520004658256203),
            v(1e3, 0.105801179312784, -7.284177899593129, -2.155661625234000),
            v(1e6, -1.422033750436706, -5.699632649250217, -2.802976040834825),
            v(1e3, -4.498532928342012, -2.627216111719469, 4.472563498532185),
            Some(v(1e6, R_F[0], R_F[1], R_F[2])),
        ),
        DataSet::III => (
            v(1e6, -5.394452557207117, -3.192217335202957, 1.775712509707950),
            v(1e3, 1.767918629073472, -6.417485911429783, -2.736527923779045),
            v(1e6, -3.580084601432768, -5.106010405266481, -1.868869802369432),
            v(1e3, -4.211400455599469, -0.835510934866194, 4.134603376902692),
            None,
        ),
    };
    Scenario {
        label: format!("data {id}"),
        gravity: GravityModel::earth(),
        interceptor0: CartesianState::new(rm, vm),
        target0: CartesianState::new(rt, vt),
        r_f: rf,
        constraints: ConstraintSet::default(),
    }
}

/// Element groups used to generate the initial data: `(interceptor, target)`.
pub fn element_group(group: usize) -> Option<(OrbitElements<f64>, OrbitElements<f64>)> {
    use std::f64::consts::PI;
    let interceptor = OrbitElements { h_alt: 500e3, i: 2.0 * PI / 3.0, raan: 4.0 * PI / 3.0, e: 0.3, argp: PI, theta: 0.0 };
    let target = OrbitElements { h_alt: 400e3, i: PI / 6.0, raan: PI / 3.0, e: 0.1, argp: 0.0, theta: 0.0 };
    match group {
        1 => Some((interceptor, target)),
        2 => Some((OrbitElements { raan: 5.0 * PI / 4.0, e: 0.5, ..interceptor }, OrbitElements { e: 0.2, ..target })),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn g() -> GravityModel<f64> {
        GravityModel::earth()
    }

    #[test]
    fn verbatim_data() {
        let d1 = load_initial_data(DataSet::I);
        assert_eq!(d1.target0.r.x, -5.842891129580837e6);
        assert_eq!(d1.target0.r.z, 2.562926625347858e6);
        let d2 = load_initial_data(DataSet::II);
        assert_eq!(d2.interceptor0.v, Vec3::new(-4.498532928342012, -2.627216111719469, 4.472563498532185) * 1e3);
        let d3 = load_initial_data(DataSet::III);
        assert_eq!(d3.target0.v.x, 1.767918629073472 * 1e3);
        assert!(d3.r_f.is_none());
        assert_eq!(d1.r_f, Some(Vec3::new(-4.4528e6, -4.4166e6, 1.7258e6)));
        for d in [d1, d2, d3] {
            d.validate().unwrap();
        }
    }

    #[test]
    fn parse_data_ids() {
        assert_eq!("II".parse::<DataSet>().unwrap(), DataSet::II);
        assert!("IV".parse::<DataSet>().is_err());
    }

    #[test]
    fn equatorial_circular() {
        let el = OrbitElements { h_alt: 1.0e6, i: 0.0, raan: 0.0, e: 0.0, argp: 0.0, theta: 0.0 };
        let a = g().re + 1.0e6;
        let s = elements_to_state(&el, &g()).unwrap();
        assert!((s.r - Vec3::new(a, 0.0, 0.0)).norm() < 1e-6);
        assert!((s.v - Vec3::new(0.0, (g().mu / a).sqrt(), 0.0)).norm() < 1e-9);
    }

    #[test]
    fn hyperbolic_rejected() {
        let el = OrbitElements { h_alt: 1.0e6, i: 0.1, raan: 0.0, e: 1.2, argp: 0.0, theta: 0.0 };
        assert!(elements_to_state(&el, &g()).is_err());
    }

    #[test]
    fn data_sets_match_element_groups() {
        // every data set lies on the tabulated conics
        for (data, group) in [(DataSet::I, 1), (DataSet::II, 1), (DataSet::III, 2)] {
            let sc = load_initial_data(data);
            let (mi, ti) = element_group(group).unwrap();
            for (s, el) in [(sc.interceptor0, mi), (sc.target0, ti)] {
                let got = state_to_elements(&s, &g()).unwrap();
                assert!((got.h_alt - el.h_alt).abs() < 0.1, "{} vs {}", got.h_alt, el.h_alt);
                assert!((got.e - el.e).abs() < 1e-8);
                assert!((got.i - el.i).abs() < 1e-8);
                assert!((wrap_angle(got.raan - el.raan + 1.0) - 1.0).abs() < 1e-8);
                assert!((wrap_angle(got.argp - el.argp + 1.0) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn exit_state_close_to_data_one() {
        let sc = load_initial_data(DataSet::I);
        let (mi, ti) = element_group(1).unwrap();
        for (el, s) in [(mi, sc.interceptor0), (ti, sc.target0)] {
            let x = atmosphere_exit_state(&el, &g()).unwrap();
            assert!((x.r.norm() - (g().re + ATMOSPHERE_HEIGHT)).abs() < 1e-3);
            assert!(x.r.dot(&x.v) > 0.0);
            // the data were sampled a few seconds above the boundary
            assert!((x.r - s.r).norm() < 50e3, "{}", (x.r - s.r).norm());
        }
    }

    #[test]
    fn circular_orbit_has_no_exit() {
        let el = OrbitElements { h_alt: 1.0e6, i: 0.3, raan: 0.0, e: 0.0, argp: 0.0, theta: 0.0 };
        assert_eq!(atmosphere_exit_state(&el, &g()), Err(ScenarioError::NoAtmosphereCrossing));
    }

    #[test]
    fn group_two_elements() {
        let (m, t) = element_group(2).unwrap();
        assert_eq!(m.raan, 5.0 * PI / 4.0);
        assert_eq!((m.e, t.e), (0.5, 0.2));
        assert!(element_group(3).is_none());
    }

    #[test]
    fn constraint_validation() {
        let mut c = ConstraintSet { alpha: Some(30.0), beta: Some(20.0), ..Default::default() };
        assert!(c.validate().is_err());
        c.beta = Some(40.0);
        c.validate().unwrap();
        c.dv1_box = Some(Box3 { min: Vec3::new(1.0, 0.0, 0.0), max: Vec3::new(0.0, 1.0, 1.0) });
        assert!(c.validate().is_err());
    }
}
