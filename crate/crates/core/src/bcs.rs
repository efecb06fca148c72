//! Boundary and interface rows for every problem variant.
//!
//! Each segment carries the interceptor state and costate plus the target
//! state as passive ODE components, so target values at any instant are
//! simply segment-edge values. On the post-`t2` segments of the
//! multi-constraint problem the slack `eps` and its costate follow.
//!
//! Rows are returned already divided by their unit scale (positions by 1e6 m,
//! velocities by 1e3 m/s, times by 1e2 s) so a single sup-norm is meaningful.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{CartesianState, Costate};
use crate::scenarios::{Box3, Scenario};
use crate::vec3::Vec3;

pub const POS_SCALE: f64 = 1e6;
pub const VEL_SCALE: f64 = 1e3;
pub const TIME_SCALE: f64 = 1e2;
pub const PR_SCALE: f64 = 1e-3;

/// Floor of the impulse norm inside the unit-vector rows.
pub const DV_GUARD: f64 = 1e-12;
/// Below this an impulse is considered degenerate when reported.
pub const DV_DEGENERATE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BcError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("scenario lacks {0}, required by variant {1}")]
    MissingData(&'static str, ProblemVariant),
    #[error("impulse {0} is exactly zero; its direction is undefined")]
    DegenerateImpulse(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    /// Seconds from t0.
    #[serde(rename = "s")]
    Seconds,
    /// Fraction of the last free instant (t_h, or t_f with a tail segment).
    Scaled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instant {
    pub value: f64,
    pub unit: TimeUnit,
}

impl Instant {
    pub const fn seconds(value: f64) -> Self {
        Instant { value, unit: TimeUnit::Seconds }
    }

    pub const fn scaled(value: f64) -> Self {
        Instant { value, unit: TimeUnit::Scaled }
    }

    /// Physical time given the reference span.
    pub fn resolve(&self, span: f64) -> f64 {
        match self.unit {
            TimeUnit::Seconds => self.value,
            TimeUnit::Scaled => self.value * span,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemVariant {
    OneImpulseFixedT1 { t1: Instant },
    OneImpulseFree,
    TwoImpulseFirstAtT0,
    TwoImpulseConstrained,
    TerminalPosition,
    MultiConstraint,
    OneImpulseTerminalPosition,
}

pub const VARIANT_NAMES: [&str; 7] = [
    "one-impulse-fixed-t1",
    "one-impulse-free",
    "two-impulse-first-at-t0",
    "two-impulse-constrained",
    "terminal-position",
    "multi-constraint",
    "one-impulse-terminal-position",
];

impl fmt::Display for ProblemVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(VARIANT_NAMES[self.index()])
    }
}

impl FromStr for ProblemVariant {
    type Err = String;

    /// Names as in [`VARIANT_NAMES`]; the fixed-instant variant defaults to `t1 = 0 s`.
    fn from_str(s: &str) -> Result<Self, String> {
        use ProblemVariant::*;
        Ok(match s {
            "one-impulse-fixed-t1" => OneImpulseFixedT1 { t1: Instant::seconds(0.0) },
            "one-impulse-free" => OneImpulseFree,
            "two-impulse-first-at-t0" => TwoImpulseFirstAtT0,
            "two-impulse-constrained" => TwoImpulseConstrained,
            "terminal-position" => TerminalPosition,
            "multi-constraint" => MultiConstraint,
            "one-impulse-terminal-position" => OneImpulseTerminalPosition,
            _ => return Err(format!("unknown variant {s:?}; expected one of {}", VARIANT_NAMES.join(", "))),
        })
    }
}

/// Role of the instant that ends a segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    Impulse(usize),
    Impact,
    Final,
}

impl ProblemVariant {
    pub const ALL: [ProblemVariant; 7] = [
        ProblemVariant::OneImpulseFixedT1 { t1: Instant::seconds(0.0) },
        ProblemVariant::OneImpulseFree,
        ProblemVariant::TwoImpulseFirstAtT0,
        ProblemVariant::TwoImpulseConstrained,
        ProblemVariant::TerminalPosition,
        ProblemVariant::MultiConstraint,
        ProblemVariant::OneImpulseTerminalPosition,
    ];

    fn index(&self) -> usize {
        use ProblemVariant::*;
        match self {
            OneImpulseFixedT1 { .. } => 0,
            OneImpulseFree => 1,
            TwoImpulseFirstAtT0 => 2,
            TwoImpulseConstrained => 3,
            TerminalPosition => 4,
            MultiConstraint => 5,
            OneImpulseTerminalPosition => 6,
        }
    }

    pub fn n_impulses(&self) -> usize {
        use ProblemVariant::*;
        match self {
            OneImpulseFixedT1 { .. } | OneImpulseFree | OneImpulseTerminalPosition => 1,
            _ => 2,
        }
    }

    /// Whether a coast arc `[t_h, t_f]` follows the impact.
    pub fn has_tail(&self) -> bool {
        matches!(
            self,
            ProblemVariant::TerminalPosition | ProblemVariant::MultiConstraint | ProblemVariant::OneImpulseTerminalPosition
        )
    }

    pub fn has_slack(&self) -> bool {
        matches!(self, ProblemVariant::MultiConstraint)
    }

    pub fn n_segments(&self) -> usize {
        self.n_impulses() + 1 + usize::from(self.has_tail())
    }

    /// Events closing segments `0..n_segments`.
    pub fn events(&self) -> Vec<Event> {
        let mut e: Vec<Event> = (0..self.n_impulses()).map(Event::Impulse).collect();
        e.push(Event::Impact);
        if self.has_tail() {
            e.push(Event::Final);
        }
        e
    }

    pub fn impact_segment(&self) -> usize {
        self.n_impulses()
    }

    pub fn segment_dim(&self, seg: usize) -> usize {
        if self.has_slack() && seg >= 2 {
            SLACK_DIM
        } else {
            BASE_DIM
        }
    }

    /// Number of time-constraint multipliers.
    pub fn n_lambda(&self) -> usize {
        use ProblemVariant::*;
        match self {
            OneImpulseFree => 1,
            TwoImpulseConstrained => 3,
            MultiConstraint => 4,
            _ => 0,
        }
    }

    pub fn n_mu(&self) -> usize {
        match self {
            ProblemVariant::TwoImpulseConstrained | ProblemVariant::MultiConstraint => 12,
            _ => 0,
        }
    }

    pub fn n_eta(&self) -> usize {
        if self.has_slack() {
            6
        } else {
            0
        }
    }

    /// Free timing parameters, leading the parameter vector.
    pub fn time_params(&self) -> &'static [TimeParam] {
        use ProblemVariant::*;
        use TimeParam::*;
        match self {
            OneImpulseFixedT1 { .. } => &[Th],
            OneImpulseFree => &[Tau1, Th],
            TwoImpulseFirstAtT0 => &[Tau2, Th],
            TwoImpulseConstrained => &[Tau1, Tau2, Th],
            TerminalPosition | MultiConstraint => &[Tau1, Tau2, TauH, Tf],
            OneImpulseTerminalPosition => &[Tau1, TauH, Tf],
        }
    }

    pub fn n_params(&self) -> usize {
        self.time_params().len() + 3 * self.n_impulses() + self.n_lambda() + self.n_mu() + self.n_eta()
    }

    /// Whether the instant of impulse `i` is an unknown with its own transversality row.
    pub fn impulse_time_free(&self, i: usize) -> bool {
        match self {
            ProblemVariant::OneImpulseFixedT1 { .. } => false,
            ProblemVariant::TwoImpulseFirstAtT0 => i == 1,
            _ => true,
        }
    }
}

/// Interceptor `[r, v, p_r, p_v]` then target `[r, v]`.
pub const BASE_DIM: usize = 18;
/// Plus `[eps, p_eps]`.
pub const SLACK_DIM: usize = 24;

pub mod idx {
    pub const R: usize = 0;
    pub const V: usize = 3;
    pub const PR: usize = 6;
    pub const PV: usize = 9;
    pub const RT: usize = 12;
    pub const VT: usize = 15;
    pub const EPS: usize = 18;
    pub const PEPS: usize = 21;
}

/// Component scale used for collocation rows and difference steps.
pub fn component_scale(i: usize) -> f64 {
    match i {
        0..=2 | 12..=14 => POS_SCALE,
        3..=5 | 15..=17 => VEL_SCALE,
        6..=8 => PR_SCALE,
        _ => 1.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeParam {
    Tau1,
    Tau2,
    TauH,
    Th,
    Tf,
}

/// Unknown constants of a variant, with every instant in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnknownParameters {
    pub t1: f64,
    pub t2: Option<f64>,
    pub th: f64,
    pub tf: Option<f64>,
    pub dv1: Vec3<f64>,
    pub dv2: Option<Vec3<f64>>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub eta: Vec<f64>,
}

impl UnknownParameters {
    /// Instants closing each segment.
    pub fn instants(&self, variant: &ProblemVariant) -> Vec<f64> {
        let mut t = vec![self.t1];
        if variant.n_impulses() == 2 {
            t.push(self.t2.unwrap_or(self.t1));
        }
        t.push(self.th);
        if variant.has_tail() {
            t.push(self.tf.unwrap_or(self.th));
        }
        t
    }

    pub fn end_time(&self, variant: &ProblemVariant) -> f64 {
        if variant.has_tail() {
            self.tf.unwrap_or(self.th)
        } else {
            self.th
        }
    }

    pub fn impulses(&self) -> Vec<Vec3<f64>> {
        let mut v = vec![self.dv1];
        if let Some(d) = self.dv2 {
            v.push(d);
        }
        v
    }

    pub fn impulse_times(&self) -> Vec<f64> {
        let mut v = vec![self.t1];
        if let Some(t) = self.t2 {
            v.push(t);
        }
        v
    }

    pub fn cost(&self) -> f64 {
        self.impulses().iter().map(|d| d.norm()).sum()
    }

    pub fn pack(&self, variant: &ProblemVariant) -> Result<Vec<f64>, BcError> {
        let n_imp = variant.n_impulses();
        if (n_imp == 2) != self.dv2.is_some() {
            return Err(BcError::Dimension(format!("variant {variant} needs {n_imp} impulses")));
        }
        for (name, have, want) in [
            ("lambda", self.lambda.len(), variant.n_lambda()),
            ("mu", self.mu.len(), variant.n_mu()),
            ("eta", self.eta.len(), variant.n_eta()),
        ] {
            if have != want {
                return Err(BcError::Dimension(format!("{name} has {have} entries, variant {variant} needs {want}")));
            }
        }
        let end = self.end_time(variant);
        let frac = |t: f64| if end != 0.0 { t / end } else { 0.0 };
        let mut p = Vec::with_capacity(variant.n_params());
        for tp in variant.time_params() {
            p.push(match tp {
                TimeParam::Tau1 => frac(self.t1),
                TimeParam::Tau2 => frac(self.t2.unwrap_or(self.t1)),
                TimeParam::TauH => frac(self.th),
                TimeParam::Th => self.th,
                TimeParam::Tf => end,
            });
        }
        p.extend(self.dv1.to_array());
        if let Some(d) = self.dv2 {
            p.extend(d.to_array());
        }
        p.extend(&self.lambda);
        p.extend(&self.mu);
        p.extend(&self.eta);
        Ok(p)
    }

    pub fn unpack(variant: &ProblemVariant, p: &[f64]) -> Result<Self, BcError> {
        if p.len() != variant.n_params() {
            return Err(BcError::Dimension(format!(
                "{} parameters, variant {variant} has {}",
                p.len(),
                variant.n_params()
            )));
        }
        let tps = variant.time_params();
        let get = |want: TimeParam| tps.iter().position(|&t| t == want).map(|i| p[i]);
        let end = get(TimeParam::Tf).or(get(TimeParam::Th)).unwrap_or(0.0);
        let th = get(TimeParam::Th).unwrap_or_else(|| get(TimeParam::TauH).unwrap_or(1.0) * end);
        let t1 = match variant {
            ProblemVariant::OneImpulseFixedT1 { t1 } => t1.resolve(th),
            ProblemVariant::TwoImpulseFirstAtT0 => 0.0,
            _ => get(TimeParam::Tau1).unwrap_or(0.0) * end,
        };
        let t2 = (variant.n_impulses() == 2).then(|| get(TimeParam::Tau2).unwrap_or(0.0) * end);
        let mut o = tps.len();
        let mut take = |n: usize| {
            let s = &p[o..o + n];
            o += n;
            s.to_vec()
        };
        let dv1 = Vec3::from_slice(&take(3));
        let dv2 = (variant.n_impulses() == 2).then(|| Vec3::from_slice(&take(3)));
        let lambda = take(variant.n_lambda());
        let mu = take(variant.n_mu());
        let eta = take(variant.n_eta());
        Ok(UnknownParameters {
            t1,
            t2,
            th,
            tf: variant.has_tail().then_some(end),
            dv1,
            dv2,
            lambda,
            mu,
            eta,
        })
    }
}

/// Scale of each raw parameter, in packing order.
pub fn param_scales(variant: &ProblemVariant) -> Vec<f64> {
    let mut s: Vec<f64> = variant
        .time_params()
        .iter()
        .map(|t| match t {
            TimeParam::Th | TimeParam::Tf => TIME_SCALE,
            _ => 1.0,
        })
        .collect();
    s.extend(std::iter::repeat_n(VEL_SCALE, 3 * variant.n_impulses()));
    s.extend(std::iter::repeat_n(1.0, variant.n_lambda() + variant.n_mu()));
    // the odd eta absorb a terminal position through the closure rows
    s.extend((0..variant.n_eta()).map(|i| if i % 2 == 0 { POS_SCALE } else { 1.0 }));
    s
}

pub fn param_labels(variant: &ProblemVariant) -> Vec<String> {
    let mut l: Vec<String> = variant
        .time_params()
        .iter()
        .map(|t| {
            match t {
                TimeParam::Tau1 => "tau1",
                TimeParam::Tau2 => "tau2",
                TimeParam::TauH => "tau_h",
                TimeParam::Th => "th",
                TimeParam::Tf => "tf",
            }
            .to_string()
        })
        .collect();
    for i in 1..=variant.n_impulses() {
        for ax in ["x", "y", "z"] {
            l.push(format!("dv{i}_{ax}"));
        }
    }
    l.extend((1..=variant.n_lambda()).map(|i| format!("lambda{i}")));
    l.extend((1..=variant.n_mu()).map(|i| format!("mu{i}")));
    l.extend((1..=variant.n_eta()).map(|i| format!("eta{i}")));
    l
}

/// Values on one segment edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeValues {
    pub state: CartesianState<f64>,
    pub costate: Costate<f64>,
    pub target: CartesianState<f64>,
    pub slack: Option<(Vec3<f64>, Vec3<f64>)>,
}

impl EdgeValues {
    pub fn from_slice(y: &[f64]) -> Self {
        let v3 = |o: usize| Vec3::from_slice(&y[o..o + 3]);
        EdgeValues {
            state: CartesianState::new(v3(idx::R), v3(idx::V)),
            costate: Costate::new(v3(idx::PR), v3(idx::PV)),
            target: CartesianState::new(v3(idx::RT), v3(idx::VT)),
            slack: (y.len() >= SLACK_DIM).then(|| (v3(idx::EPS), v3(idx::PEPS))),
        }
    }

    fn eps(&self) -> Vec3<f64> {
        self.slack.map(|s| s.0).unwrap_or_default()
    }

    fn p_eps(&self) -> Vec3<f64> {
        self.slack.map(|s| s.1).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    /// `(left, right)` of every segment.
    pub segments: Vec<(EdgeValues, EdgeValues)>,
}

impl BoundaryData {
    pub fn from_edges(edges: &[crate::mpbvp::Edges<'_>]) -> Self {
        BoundaryData {
            segments: edges.iter().map(|e| (EdgeValues::from_slice(e.left), EdgeValues::from_slice(e.right))).collect(),
        }
    }

    fn left(&self, k: usize) -> &EdgeValues {
        &self.segments[k].0
    }

    fn right(&self, k: usize) -> &EdgeValues {
        &self.segments[k].1
    }
}

/// Unit family a row is measured in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Position,
    Velocity,
    Time,
    PositionCostate,
    Unit,
}

impl RowKind {
    pub fn scale(&self) -> f64 {
        match self {
            RowKind::Position => POS_SCALE,
            RowKind::Velocity => VEL_SCALE,
            RowKind::Time => TIME_SCALE,
            RowKind::PositionCostate => PR_SCALE,
            RowKind::Unit => 1.0,
        }
    }
}

/// Which family a row belongs to, for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowGroup {
    Initial,
    Continuity,
    Interception,
    Terminal,
    Costate,
    Transversality,
    Complementarity,
    Slack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowInfo {
    pub label: String,
    pub kind: RowKind,
    pub group: RowGroup,
}

struct Sink<'a> {
    out: &'a mut Vec<f64>,
    labels: Option<&'a mut Vec<RowInfo>>,
}

impl Sink<'_> {
    fn row(&mut self, group: RowGroup, kind: RowKind, label: impl FnOnce() -> String, v: f64) {
        self.out.push(v / kind.scale());
        if let Some(l) = self.labels.as_deref_mut() {
            l.push(RowInfo { label: label(), kind, group });
        }
    }

    fn vec(&mut self, group: RowGroup, kind: RowKind, label: &str, v: Vec3<f64>) {
        for (i, ax) in ["x", "y", "z"].iter().enumerate() {
            self.row(group, kind, || format!("{label} [{ax}]"), v[i]);
        }
    }
}

fn unit(dv: &Vec3<f64>) -> Vec3<f64> {
    *dv / dv.norm().max(DV_GUARD)
}

fn box_offset(mu: &[f64]) -> Vec3<f64> {
    Vec3::new(mu[0] - mu[1], mu[2] - mu[3], mu[4] - mu[5])
}

fn slack_term(k: &Vec3<f64>, eps: &Vec3<f64>, p: &Vec3<f64>) -> f64 {
    (0..3).map(|i| -0.25 * p[i] * p[i] + k[i] * eps[i] * eps[i]).sum()
}

fn name(e: Event) -> &'static str {
    match e {
        Event::Impulse(0) => "t1",
        Event::Impulse(_) => "t2",
        Event::Impact => "th",
        Event::Final => "tf",
    }
}

fn emit(
    variant: &ProblemVariant,
    bd: &BoundaryData,
    p: &UnknownParameters,
    sc: &Scenario,
    sink: &mut Sink<'_>,
) -> Result<(), BcError> {
    use RowGroup as G;
    use RowKind as K;

    let n = variant.n_segments();
    if bd.segments.len() != n {
        return Err(BcError::Dimension(format!("{} segments of boundary data, variant {variant} has {n}", bd.segments.len())));
    }
    for k in 0..n {
        let want = variant.segment_dim(k) == SLACK_DIM;
        if bd.left(k).slack.is_some() != want || bd.right(k).slack.is_some() != want {
            return Err(BcError::Dimension(format!("segment {k} slack components")));
        }
    }
    let cs = &sc.constraints;
    let events = variant.events();
    let dvs = p.impulses();
    if dvs.len() != variant.n_impulses() {
        return Err(BcError::Dimension(format!("variant {variant} needs {} impulses", variant.n_impulses())));
    }
    for (i, dv) in dvs.iter().enumerate() {
        if dv.norm() == 0.0 {
            return Err(BcError::DegenerateImpulse(i + 1));
        }
    }
    let (lam, mu, eta) = (&p.lambda, &p.mu, &p.eta);
    if lam.len() != variant.n_lambda() || mu.len() != variant.n_mu() || eta.len() != variant.n_eta() {
        return Err(BcError::Dimension("multiplier counts".into()));
    }

    // initial states
    let a = bd.left(0);
    sink.vec(G::Initial, K::Position, "r_M(t0)", a.state.r - sc.interceptor0.r);
    sink.vec(G::Initial, K::Velocity, "v_M(t0)", a.state.v - sc.interceptor0.v);
    sink.vec(G::Initial, K::Position, "r_T(t0)", a.target.r - sc.target0.r);
    sink.vec(G::Initial, K::Velocity, "v_T(t0)", a.target.v - sc.target0.v);

    // interfaces
    for k in 0..n - 1 {
        let (l, r) = (bd.right(k), bd.left(k + 1));
        let ev = events[k];
        let t = name(ev);
        sink.vec(G::Continuity, K::Position, &format!("r_M({t})"), r.state.r - l.state.r);
        let jump = match ev {
            Event::Impulse(i) => dvs[i],
            _ => Vec3::zero(),
        };
        sink.vec(G::Continuity, K::Velocity, &format!("v_M({t}) jump"), r.state.v - l.state.v - jump);
        sink.vec(G::Continuity, K::Position, &format!("r_T({t})"), r.target.r - l.target.r);
        sink.vec(G::Continuity, K::Velocity, &format!("v_T({t})"), r.target.v - l.target.v);
        sink.vec(G::Costate, K::Unit, &format!("p_v({t}) continuity"), l.costate.p_v - r.costate.p_v);
        if matches!(ev, Event::Impulse(_)) {
            sink.vec(G::Costate, K::PositionCostate, &format!("p_r({t}) continuity"), l.costate.p_r - r.costate.p_r);
        }
        if variant.has_slack() {
            if l.slack.is_none() && r.slack.is_some() {
                // p_eps is zero from t0 and constant up to t2
                sink.vec(G::Slack, K::Unit, "p_eps(t2+)", r.p_eps());
            } else if let Event::Impact = ev {
                sink.vec(G::Slack, K::Unit, "eps(th) continuity", r.eps() - l.eps());
                let e = l.eps();
                let h = Vec3::new(eta[1] * e.x, eta[3] * e.y, eta[5] * e.z);
                sink.vec(G::Slack, K::Unit, "p_eps(th) jump", -l.p_eps() + r.p_eps() + h * 2.0);
            }
        }
    }

    // interception
    let ki = variant.impact_segment();
    let hit = bd.right(ki);
    sink.vec(G::Interception, K::Position, "r_M(th) - r_T(th)", hit.state.r - hit.target.r);

    // primer conditions with optional box offsets
    for (i, dv) in dvs.iter().enumerate() {
        let pv = bd.right(i).costate.p_v;
        let off = if mu.is_empty() { Vec3::zero() } else { box_offset(&mu[6 * i..6 * i + 6]) };
        sink.vec(G::Costate, K::Unit, &format!("primer at t{}", i + 1), pv + unit(dv) + off);
    }

    // end conditions
    let last = bd.right(n - 1);
    if variant.has_tail() {
        sink.vec(G::Costate, K::Unit, "p_v(tf)", last.costate.p_v);
    } else {
        sink.vec(G::Costate, K::Unit, "p_v(th)", last.costate.p_v);
    }
    match variant {
        ProblemVariant::TerminalPosition | ProblemVariant::OneImpulseTerminalPosition => {
            let rf = sc.r_f.ok_or(BcError::MissingData("r_f", *variant))?;
            sink.vec(G::Terminal, K::Position, "r_M(tf) - r_f", last.state.r - rf);
        }
        ProblemVariant::MultiConstraint => {
            let rf = sc.r_f.ok_or(BcError::MissingData("r_f", *variant))?;
            let rmin = cs.r_min.ok_or(BcError::MissingData("r_min", *variant))?;
            let rmax = cs.r_max.ok_or(BcError::MissingData("r_max", *variant))?;
            let pre = bd.right(ki);
            let (e_f, p_f, e_h) = (last.eps(), last.p_eps(), pre.eps());
            let h = Vec3::new(eta[0] * e_f.x, eta[2] * e_f.y, eta[4] * e_f.z);
            sink.vec(G::Slack, K::Unit, "p_eps(tf)", -p_f + h * 2.0);
            let dev = last.state.r - rf;
            sink.vec(G::Terminal, K::Position, "upper terminal face", dev - rmax + e_f.hadamard(&e_f));
            sink.vec(G::Terminal, K::Position, "lower terminal face", -dev + rmin + e_h.hadamard(&e_h));
            let d_eta = Vec3::new(eta[0] - eta[1], eta[2] - eta[3], eta[4] - eta[5]);
            sink.vec(G::Terminal, K::Position, "eta closure", d_eta - last.state.r);
        }
        _ => {}
    }

    // transversality
    let lam_t = |i: usize| -> f64 {
        match (variant, i) {
            (ProblemVariant::OneImpulseFree, 0) => -lam[0],
            (ProblemVariant::TwoImpulseConstrained, 0) => -lam[0] + lam[1] + lam[2],
            (ProblemVariant::TwoImpulseConstrained, 1) => -lam[2],
            (ProblemVariant::MultiConstraint, 0) => -lam[0] + lam[1] + lam[2],
            (ProblemVariant::MultiConstraint, 1) => -lam[2] + lam[3],
            _ => 0.0,
        }
    };
    for (i, dv) in dvs.iter().enumerate() {
        if variant.impulse_time_free(i) {
            let pr = bd.right(i).costate.p_r;
            sink.row(G::Transversality, K::Unit, || format!("t{} transversality", i + 1), -pr.dot(dv) + lam_t(i));
        }
    }
    let rel = hit.state.v - hit.target.v;
    if variant.has_tail() {
        let after = bd.left(ki + 1);
        let mut v = (hit.costate.p_r - after.costate.p_r).dot(&rel);
        if variant.has_slack() {
            v += -lam[3] + slack_term(&cs.k3, &hit.eps(), &hit.p_eps());
        }
        sink.row(G::Transversality, K::Unit, || "th transversality".into(), v);
        let mut w = last.costate.p_r.dot(&last.state.v);
        if variant.has_slack() {
            w += slack_term(&cs.k4, &last.eps(), &last.p_eps());
        }
        sink.row(G::Transversality, K::Unit, || "tf transversality".into(), w);
    } else {
        sink.row(G::Transversality, K::Unit, || "th transversality".into(), hit.costate.p_r.dot(&rel));
    }

    // complementary slackness for the time windows
    let (t1, t2, th) = (p.t1, p.t2.unwrap_or(p.t1), p.th);
    let windows: Vec<(&str, Option<f64>)> = match variant {
        ProblemVariant::OneImpulseFree => vec![("t1 >= 0", Some(-t1))],
        ProblemVariant::TwoImpulseConstrained | ProblemVariant::MultiConstraint => {
            let mut w = vec![
                ("t1 >= alpha", cs.alpha.map(|a| a - t1)),
                ("t1 <= beta", cs.beta.map(|b| t1 - b)),
                ("t2 - t1 >= gamma", cs.gamma.map(|g| g - (t2 - t1))),
            ];
            if variant.has_slack() {
                w.push(("th - t2 >= eta", cs.eta.map(|e| e - (th - t2))));
            }
            w
        }
        _ => vec![],
    };
    for (j, (label, g)) in windows.into_iter().enumerate() {
        match g {
            Some(g) => sink.row(G::Complementarity, K::Time, || format!("lambda{} ({label})", j + 1), lam[j] * g),
            // absent window: the multiplier is pinned to zero
            None => sink.row(G::Complementarity, K::Unit, || format!("lambda{} (no {label})", j + 1), lam[j]),
        }
    }

    // complementary slackness for the impulse boxes
    if !mu.is_empty() {
        for (i, dv) in dvs.iter().enumerate() {
            let bx: Option<Box3> = if i == 0 { cs.dv1_box } else { cs.dv2_box };
            for ax in 0..3 {
                let (mu_hi, mu_lo) = (mu[6 * i + 2 * ax], mu[6 * i + 2 * ax + 1]);
                let (hi_i, lo_i) = (6 * i + 2 * ax + 1, 6 * i + 2 * ax + 2);
                match bx {
                    Some(b) => {
                        sink.row(G::Complementarity, K::Velocity, || format!("mu{hi_i} (dv{} upper)", i + 1), mu_hi * (dv[ax] - b.max[ax]));
                        sink.row(G::Complementarity, K::Velocity, || format!("mu{lo_i} (dv{} lower)", i + 1), mu_lo * (b.min[ax] - dv[ax]));
                    }
                    None => {
                        sink.row(G::Complementarity, K::Unit, || format!("mu{hi_i} (no box)"), mu_hi);
                        sink.row(G::Complementarity, K::Unit, || format!("mu{lo_i} (no box)"), mu_lo);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Multiplier attached to one inequality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplier {
    Lambda(usize),
    Mu(usize),
}

/// One scalar inequality `g <= 0` handled by static slackness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    pub multiplier: Multiplier,
    pub multiplier_value: f64,
    /// Physical value, seconds or m/s.
    pub g: f64,
    /// `g` over its unit scale.
    pub g_scaled: f64,
}

/// Time windows and impulse boxes present for `variant`, evaluated at `p`.
pub fn inequalities(variant: &ProblemVariant, sc: &Scenario, p: &UnknownParameters) -> Vec<Inequality> {
    let cs = &sc.constraints;
    let mut out = Vec::new();
    let mut push = |name: String, m: Multiplier, value: f64, g: f64, scale: f64| {
        out.push(Inequality { name, multiplier: m, multiplier_value: value, g, g_scaled: g / scale });
    };
    let (t1, t2, th) = (p.t1, p.t2.unwrap_or(p.t1), p.th);
    let lam = |j: usize| p.lambda.get(j).copied().unwrap_or(0.0);
    match variant {
        ProblemVariant::OneImpulseFree => push("t1 >= 0".into(), Multiplier::Lambda(0), lam(0), -t1, TIME_SCALE),
        ProblemVariant::TwoImpulseConstrained | ProblemVariant::MultiConstraint => {
            let mut w = vec![
                ("t1 >= alpha", cs.alpha.map(|a| a - t1)),
                ("t1 <= beta", cs.beta.map(|b| t1 - b)),
                ("t2 - t1 >= gamma", cs.gamma.map(|g| g - (t2 - t1))),
            ];
            if variant.has_slack() {
                w.push(("th - t2 >= eta", cs.eta.map(|e| e - (th - t2))));
            }
            for (j, (name, g)) in w.into_iter().enumerate() {
                if let Some(g) = g {
                    push(name.into(), Multiplier::Lambda(j), lam(j), g, TIME_SCALE);
                }
            }
        }
        _ => {}
    }
    if variant.n_mu() > 0 {
        for (i, dv) in p.impulses().iter().enumerate() {
            let Some(b) = (if i == 0 { cs.dv1_box } else { cs.dv2_box }) else { continue };
            for (ax, axn) in ["x", "y", "z"].iter().enumerate() {
                let (hi, lo) = (6 * i + 2 * ax, 6 * i + 2 * ax + 1);
                let m = |j: usize| p.mu.get(j).copied().unwrap_or(0.0);
                push(format!("dv{}_{axn} <= {}", i + 1, b.max[ax]), Multiplier::Mu(hi), m(hi), dv[ax] - b.max[ax], VEL_SCALE);
                push(format!("dv{}_{axn} >= {}", i + 1, b.min[ax]), Multiplier::Mu(lo), m(lo), b.min[ax] - dv[ax], VEL_SCALE);
            }
        }
    }
    out
}

/// Move `p` onto the boundary of inequality `m` (`g = 0`).
pub fn project_onto(variant: &ProblemVariant, sc: &Scenario, p: &mut UnknownParameters, m: Multiplier) {
    let cs = &sc.constraints;
    match m {
        Multiplier::Lambda(j) => match (variant, j) {
            (ProblemVariant::OneImpulseFree, _) => p.t1 = 0.0,
            (_, 0) => p.t1 = cs.alpha.unwrap_or(p.t1),
            (_, 1) => p.t1 = cs.beta.unwrap_or(p.t1),
            (_, 2) => p.t2 = cs.gamma.map(|g| p.t1 + g).or(p.t2),
            _ => p.t2 = cs.eta.map(|e| p.th - e).or(p.t2),
        },
        Multiplier::Mu(j) => {
            let (imp, ax, upper) = (j / 6, (j % 6) / 2, j % 2 == 0);
            let Some(b) = (if imp == 0 { cs.dv1_box } else { cs.dv2_box }) else { return };
            let dv = if imp == 0 { Some(&mut p.dv1) } else { p.dv2.as_mut() };
            if let Some(dv) = dv {
                dv[ax] = if upper { b.max[ax] } else { b.min[ax] };
            }
        }
    }
}

/// Set the multiplier value inside `p`.
pub fn set_multiplier(p: &mut UnknownParameters, m: Multiplier, v: f64) {
    match m {
        Multiplier::Lambda(j) => p.lambda[j] = v,
        Multiplier::Mu(j) => p.mu[j] = v,
    }
}

/// Scaled residual rows of `variant` at the given edge values and parameters.
pub fn residuals(
    variant: &ProblemVariant,
    bd: &BoundaryData,
    p: &UnknownParameters,
    sc: &Scenario,
) -> Result<Vec<f64>, BcError> {
    let mut out = Vec::with_capacity(n_residuals(variant));
    emit(variant, bd, p, sc, &mut Sink { out: &mut out, labels: None })?;
    Ok(out)
}

/// Residual rows together with their labels and unit families.
pub fn labelled_residuals(
    variant: &ProblemVariant,
    bd: &BoundaryData,
    p: &UnknownParameters,
    sc: &Scenario,
) -> Result<Vec<(RowInfo, f64)>, BcError> {
    let mut out = Vec::new();
    let mut labels = Vec::new();
    emit(variant, bd, p, sc, &mut Sink { out: &mut out, labels: Some(&mut labels) })?;
    Ok(labels.into_iter().zip(out).collect())
}

/// Row count by enumeration of the row families.
pub fn n_residuals(variant: &ProblemVariant) -> usize {
    let n = variant.n_segments();
    let n_imp = variant.n_impulses();
    let mut rows = 12; // initial interceptor and target
    rows += (n - 1) * 15; // state, target and p_v continuity
    rows += n_imp * 3; // p_r continuity at impulses
    rows += 3; // interception
    rows += n_imp * 3; // primer
    rows += 3; // p_v at the end
    if variant.has_tail() {
        rows += 3; // terminal position or eta closure
    }
    rows += (0..n_imp).filter(|&i| variant.impulse_time_free(i)).count();
    rows += 1 + usize::from(variant.has_tail());
    rows += variant.n_lambda() + variant.n_mu();
    if variant.has_slack() {
        rows += 3 + 6 + 3 + 6; // p_eps(t2+), eps continuity and jump at th, p_eps(tf), two faces
    }
    rows
}

/// `(unknowns, residual rows)`: ODE components over all segments plus parameters.
pub fn dof_balance(variant: &ProblemVariant) -> (usize, usize) {
    let ode: usize = (0..variant.n_segments()).map(|k| variant.segment_dim(k)).sum();
    (ode + variant.n_params(), n_residuals(variant))
}

/// Complementary-slackness product `lambda * g`.
pub fn static_slack_rows(lambda: f64, g: f64) -> f64 {
    lambda * g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{load_initial_data, DataSet};

    #[test]
    fn dof_counts() {
        use ProblemVariant::*;
        let expect = [
            (OneImpulseFixedT1 { t1: Instant::seconds(50.0) }, 40),
            (OneImpulseFree, 42),
            (TwoImpulseFirstAtT0, 62),
            (TwoImpulseConstrained, 78),
            (TerminalPosition, 82),
            (MultiConstraint, 116),
            (OneImpulseTerminalPosition, 60),
        ];
        for (v, n) in expect {
            assert_eq!(dof_balance(&v), (n, n), "{v}");
        }
    }

    #[test]
    fn static_slack() {
        assert_eq!(static_slack_rows(0.0, 5.0), 0.0);
        assert_eq!(static_slack_rows(0.8594, 0.0), 0.0);
        assert_eq!(static_slack_rows(2.0, 3.0), 6.0);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ProblemVariant::ALL {
            assert_eq!(v.to_string().parse::<ProblemVariant>().unwrap().to_string(), v.to_string());
        }
        assert!("two-impulse".parse::<ProblemVariant>().is_err());
    }

    fn sample_params(v: &ProblemVariant) -> UnknownParameters {
        let two = v.n_impulses() == 2;
        UnknownParameters {
            t1: if matches!(v, ProblemVariant::TwoImpulseFirstAtT0) { 0.0 } else { 20.0 },
            t2: two.then_some(61.0),
            th: 682.0,
            tf: v.has_tail().then_some(949.0),
            dv1: Vec3::new(-100.0, 100.0, -100.0),
            dv2: two.then(|| Vec3::new(-297.0, 265.0, -490.0)),
            lambda: vec![0.5; v.n_lambda()],
            mu: vec![0.25; v.n_mu()],
            eta: vec![-2.0; v.n_eta()],
        }
    }

    #[test]
    fn pack_round_trip() {
        for v in ProblemVariant::ALL {
            let mut p = sample_params(&v);
            if let ProblemVariant::OneImpulseFixedT1 { t1 } = v {
                p.t1 = t1.resolve(p.th);
            }
            let raw = p.pack(&v).unwrap();
            assert_eq!(raw.len(), v.n_params());
            let q = UnknownParameters::unpack(&v, &raw).unwrap();
            for (a, b) in p.instants(&v).iter().zip(q.instants(&v)) {
                assert!((a - b).abs() < 1e-9, "{v}: {a} vs {b}");
            }
            assert_eq!(p.dv1, q.dv1);
            assert_eq!(p.mu, q.mu);
        }
    }

    fn zero_edges(v: &ProblemVariant) -> BoundaryData {
        let e = |k: usize| EdgeValues::from_slice(&vec![1.0; v.segment_dim(k)]);
        BoundaryData { segments: (0..v.n_segments()).map(|k| (e(k), e(k))).collect() }
    }

    #[test]
    fn residual_lengths_match_enumeration() {
        let mut sc = load_initial_data(DataSet::II);
        sc.constraints.r_min = Some(Vec3::new(-500.0, -500.0, -500.0));
        sc.constraints.r_max = Some(Vec3::new(500.0, 500.0, 500.0));
        for v in ProblemVariant::ALL {
            let r = residuals(&v, &zero_edges(&v), &sample_params(&v), &sc).unwrap();
            assert_eq!(r.len(), n_residuals(&v), "{v}");
            let l = labelled_residuals(&v, &zero_edges(&v), &sample_params(&v), &sc).unwrap();
            assert_eq!(l.len(), r.len());
            for ((_, a), b) in l.iter().zip(&r) {
                assert_eq!(a, b);
            }
        }
        assert_eq!(n_residuals(&ProblemVariant::MultiConstraint), 116);
    }

    #[test]
    fn missing_reference_is_reported() {
        let sc = load_initial_data(DataSet::III);
        let v = ProblemVariant::TerminalPosition;
        assert!(matches!(
            residuals(&v, &zero_edges(&v), &sample_params(&v), &sc),
            Err(BcError::MissingData("r_f", _))
        ));
    }

    #[test]
    fn zero_impulse_is_degenerate() {
        let sc = load_initial_data(DataSet::I);
        let v = ProblemVariant::OneImpulseFree;
        let mut p = sample_params(&v);
        p.dv1 = Vec3::zero();
        assert_eq!(residuals(&v, &zero_edges(&v), &p, &sc), Err(BcError::DegenerateImpulse(1)));
        p.dv1 = Vec3::new(1e-13, 0.0, 0.0);
        let r = residuals(&v, &zero_edges(&v), &p, &sc).unwrap();
        assert!(r.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn costate_continuity_antisymmetric() {
        // swapping the two sides of an interface flips the sign of its continuity rows
        let sc = load_initial_data(DataSet::I);
        let v = ProblemVariant::OneImpulseFree;
        let p = sample_params(&v);
        let mut bd = zero_edges(&v);
        let mut a = vec![0.0; BASE_DIM];
        let mut b = vec![0.0; BASE_DIM];
        for i in 0..BASE_DIM {
            a[i] = 1.0 + i as f64;
            b[i] = 0.5 * i as f64 - 3.0;
        }
        bd.segments[0].1 = EdgeValues::from_slice(&a);
        bd.segments[1].0 = EdgeValues::from_slice(&b);
        let fwd = labelled_residuals(&v, &bd, &p, &sc).unwrap();
        bd.segments[0].1 = EdgeValues::from_slice(&b);
        bd.segments[1].0 = EdgeValues::from_slice(&a);
        let back = labelled_residuals(&v, &bd, &p, &sc).unwrap();
        let mut seen = 0;
        for ((info, x), (_, y)) in fwd.iter().zip(&back) {
            if info.label.contains("continuity") {
                assert_eq!(*x, -*y, "{}", info.label);
                seen += 1;
            }
        }
        assert_eq!(seen, 6);
    }

    #[test]
    fn absent_constraints_pin_multipliers() {
        let sc = load_initial_data(DataSet::I);
        let v = ProblemVariant::TwoImpulseConstrained;
        let p = sample_params(&v);
        let rows = labelled_residuals(&v, &zero_edges(&v), &p, &sc).unwrap();
        let pinned: Vec<_> = rows.iter().filter(|(i, _)| i.label.contains("no ")).collect();
        assert_eq!(pinned.len(), 3 + 12);
        assert!(pinned.iter().all(|(_, x)| *x == 0.5 || *x == 0.25));
    }
}
