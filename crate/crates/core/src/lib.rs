//! Optimal one- and two-impulse interception by the indirect method.
//!
//! The necessary conditions are posed as multipoint boundary-value problems in
//! a normalized time and solved with a Lobatto IIIA collocation solver that
//! carries unknown parameters. `dynamics`, `timechange` and the element
//! conversions are generic over [`Scalar`]; the solver stack is `f64`.

pub mod bcs;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod guess;
pub mod mpbvp;
pub mod oracle;
pub mod problem;
pub mod scalar;
pub mod scenarios;
pub mod timechange;
pub mod vec3;

pub use scalar::Scalar;
pub use vec3::{Mat3, Vec3};

pub type Vector3 = vec3::Vec3<f64>;
pub type State = dynamics::CartesianState<f64>;
pub type CostateF64 = dynamics::Costate<f64>;
pub type Gravity = dynamics::GravityModel<f64>;
pub type Elements = scenarios::OrbitElements<f64>;
pub type Map = timechange::TimeMap<f64>;

pub type State32 = dynamics::CartesianState<f32>;
pub type Gravity32 = dynamics::GravityModel<f32>;
