//! Dynamic Bayesian network safety model.
//!
//! Three hypotheses drive the verdict:
//!
//! * **LE** (lateral evidence): a two-factor sigmoid over the filtered
//!   lateral velocity and the filtered lateral distance of the cut-in's near
//!   edge to the ego lane marking.
//! * **safe_lat**: an indicator of positive lateral clearance between the
//!   two footprints.
//! * **safe**: an indicator that the longitudinal time gap exceeds the
//!   critical TTC.
//!
//! The lateral quantities are tracked by discrete Bayes filters over the
//! node grids below, unrolled over a fixed window of time slices. A
//! constant-velocity prediction to the moment the cut-in reaches the ego
//! lane center supplies the early-warning term.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::models::{cc_verdict, ModelDecision, Observation, ReactionController, Reason, SafetyModel, SafetyParams};
use crate::sim::{bumper_gap, detect_crash, edge_to_marking, step, AccelCommand, Mode, VehicleState};

const EXP_CLAMP: f64 = 700.0;

/// Constants of the lane-change sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub s_v: f64,
    pub m_v: f64,
    pub s_o: f64,
    pub m_o: f64,
}

impl Default for SigmoidParams {
    fn default() -> Self {
        Self { s_v: 0.062, m_v: 8.945, s_o: 3.386, m_o: 7.313 }
    }
}

fn sigmoid_factor(scale: f64, slope: f64, x: f64) -> f64 {
    let e = (slope * x).clamp(-EXP_CLAMP, EXP_CLAMP).exp();
    scale / (scale + e)
}

/// Velocity factor of the LE sigmoid.
pub fn le_velocity_factor(v_lat: f64, p: &SigmoidParams) -> f64 {
    sigmoid_factor(p.s_v, p.m_v, v_lat)
}

/// Offset factor of the LE sigmoid.
pub fn le_offset_factor(dy0_lat: f64, p: &SigmoidParams) -> f64 {
    sigmoid_factor(p.s_o, p.m_o, dy0_lat)
}

/// P(LE = true) for a lateral velocity (negative toward the ego lane) and a
/// lateral distance to the lane marking.
pub fn le_probability(v_lat: f64, dy0_lat: f64, p: &SigmoidParams) -> f64 {
    (le_velocity_factor(v_lat, p) * le_offset_factor(dy0_lat, p)).min(1.0)
}

/// Discretization of one network node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    pub unit: String,
}

impl NodeSpec {
    pub fn new(name: &str, lo: f64, hi: f64, step: f64, unit: &str) -> Self {
        Self { name: name.into(), lo, hi, step, unit: unit.into() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite()) {
            return Err(format!("node {}: non-finite bounds", self.name));
        }
        if self.hi <= self.lo || self.step <= 0.0 {
            return Err(format!("node {}: need hi > lo and step > 0", self.name));
        }
        Ok(())
    }

    pub fn state_count(&self) -> usize {
        ((self.hi - self.lo) / self.step).round() as usize + 1
    }

    /// Representative value of state `i`.
    pub fn value(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    /// Nearest state index, clamped to the node range.
    pub fn discretize(&self, value: f64) -> usize {
        let last = self.state_count() - 1;
        if value.is_nan() {
            return 0;
        }
        let idx = ((value - self.lo) / self.step).round();
        if idx <= 0.0 {
            0
        } else {
            (idx as usize).min(last)
        }
    }
}

pub fn discretize(value: f64, spec: &NodeSpec) -> usize {
    spec.discretize(value)
}

/// Probability mass over the states of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBelief {
    pub probs: Vec<f64>,
}

impl DiscreteBelief {
    pub fn uniform(node: &NodeSpec) -> Self {
        let n = node.state_count();
        Self { probs: vec![1.0 / n as f64; n] }
    }

    pub fn point(node: &NodeSpec, value: f64) -> Self {
        let mut probs = vec![0.0; node.state_count()];
        probs[node.discretize(value)] = 1.0;
        Self { probs }
    }

    pub fn mean(&self, node: &NodeSpec) -> f64 {
        self.probs.iter().enumerate().map(|(i, p)| p * node.value(i)).sum()
    }

    pub fn variance(&self, node: &NodeSpec) -> f64 {
        let m = self.mean(node);
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| p * (node.value(i) - m).powi(2))
            .sum()
    }

    pub fn mode(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |(bi, bp), (i, &p)| if p > bp { (i, p) } else { (bi, bp) })
            .0
    }

    fn normalize(&mut self) -> f64 {
        let total: f64 = self.probs.iter().sum();
        if total > 0.0 && total.is_finite() {
            self.probs.iter_mut().for_each(|p| *p /= total);
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub belief: DiscreteBelief,
    /// Set when the likelihood vanished everywhere and the prior was kept.
    pub degenerate: bool,
}

/// Bayes update with a Gaussian measurement likelihood centered on each
/// state's value.
pub fn filter_update(prior: &DiscreteBelief, node: &NodeSpec, measurement: f64, sigma: f64) -> FilterOutcome {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut post = DiscreteBelief {
        probs: prior
            .probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = node.value(i) - measurement;
                p * (-d * d * inv).exp()
            })
            .collect(),
    };
    let total = post.normalize();
    if !(total > 0.0 && total.is_finite()) {
        return FilterOutcome { belief: prior.clone(), degenerate: true };
    }
    FilterOutcome { belief: post, degenerate: false }
}

/// Transition between time slices: shift the mass by `shift` (value units,
/// linear interpolation between neighbours), smooth with a one-state
/// triangular kernel, then mix in `floor` of uniform mass.
pub fn predict(belief: &DiscreteBelief, node: &NodeSpec, shift: f64, floor: f64) -> DiscreteBelief {
    let n = belief.probs.len();
    let last = n - 1;
    let mut shifted = vec![0.0; n];
    let s = if shift.is_finite() { shift / node.step } else { 0.0 };
    let whole = s.floor();
    let frac = s - whole;
    for (i, &p) in belief.probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let base = i as f64 + whole;
        let lo = (base.max(0.0) as usize).min(last);
        let hi = ((base + 1.0).max(0.0) as usize).min(last);
        shifted[lo] += p * (1.0 - frac);
        shifted[hi] += p * frac;
    }
    let mut out = vec![0.0; n];
    for i in 0..n {
        let left = shifted[i.saturating_sub(1)];
        let right = shifted[(i + 1).min(last)];
        out[i] = 0.25 * left + 0.5 * shifted[i] + 0.25 * right;
    }
    let u = 1.0 / n as f64;
    let mut b = DiscreteBelief {
        probs: out.into_iter().map(|p| (1.0 - floor) * p + floor * u).collect(),
    };
    b.normalize();
    b
}

/// 1 when the footprints have positive lateral clearance, else 0.
pub fn safe_lat(ego: &VehicleState, cutin: &VehicleState) -> f64 {
    let clearance = (ego.pos_lat - cutin.pos_lat).abs() - ego.width / 2.0 - cutin.width / 2.0;
    if clearance > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Denominator used to turn the longitudinal gap into a time value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Ego speed minus cut-in speed.
    ClosingSpeed,
    /// Ego position minus cut-in position, kept for comparison only.
    PositionDifference,
}

/// Longitudinal time value: |bumper gap| over the chosen denominator,
/// zero when the denominator is zero.
pub fn longitudinal_value(ego: &VehicleState, cutin: &VehicleState, mode: Denominator) -> f64 {
    let num = bumper_gap(ego, cutin).abs();
    let denom = match mode {
        Denominator::ClosingSpeed => ego.v_long - cutin.v_long,
        Denominator::PositionDifference => ego.pos_long - cutin.pos_long,
    };
    if denom != 0.0 {
        num / denom
    } else {
        0.0
    }
}

/// 1 when the longitudinal time value exceeds the critical TTC.
///
/// With the closing-speed denominator, a cut-in that is not being closed
/// on (or is already behind the ego) is safe as long as the gap is
/// positive.
pub fn safe_long(ego: &VehicleState, cutin: &VehicleState, params: &SafetyParams, mode: Denominator) -> f64 {
    if mode == Denominator::ClosingSpeed {
        if cutin.pos_long < ego.pos_long {
            return 1.0;
        }
        if ego.v_long - cutin.v_long <= 0.0 && bumper_gap(ego, cutin) > 0.0 {
            return 1.0;
        }
    }
    if longitudinal_value(ego, cutin, mode) > params.cc_critical_ttc {
        1.0
    } else {
        0.0
    }
}

/// Time for a lateral offset `dy0` to close at lateral velocity `vy`.
pub fn time_to_boundary(dy0: f64, vy: f64) -> Option<f64> {
    (vy < 0.0 && dy0 > 0.0).then(|| dy0 / -vy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub x_pred_ego: f64,
    pub x_pred_obj: f64,
    /// Ego front predicted at or beyond the cut-in's rear.
    pub overlap: bool,
}

/// Constant-velocity positions after `ttb` seconds; `margin` is the
/// half-length sum so that overlap means bumper contact.
pub fn predict_positions(ttb: f64, ve0: f64, vo0: f64, x_ego: f64, x_obj: f64, margin: f64) -> Prediction {
    let x_pred_ego = ve0 * ttb + x_ego;
    let x_pred_obj = vo0 * ttb + x_obj;
    Prediction { x_pred_ego, x_pred_obj, overlap: x_pred_ego + margin > x_pred_obj }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HypothesisResult {
    pub p_le: f64,
    pub p_safe_lat: f64,
    pub p_safe: f64,
    pub ttb: Option<f64>,
    pub predicted_overlap: bool,
    pub v_lat: f64,
    pub dy0_lat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbnNodes {
    pub dy0_lat: NodeSpec,
    pub v_lat: NodeSpec,
    /// Lateral acceleration node; carried for completeness, not used by the
    /// decision rule.
    pub a_lat: Option<NodeSpec>,
}

impl Default for DbnNodes {
    fn default() -> Self {
        Self {
            dy0_lat: NodeSpec::new("dy0_lat_real", -2.0, 2.0, 0.1, "m"),
            v_lat: NodeSpec::new("v_lat_real", -1.9, 0.5, 0.1, "m/s"),
            a_lat: Some(NodeSpec::new("a_lat_real", 0.0, 1.5, 0.1, "m/s^2")),
        }
    }
}

/// Network specification; every field has a default so partial JSON
/// documents are accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub sigmoid: SigmoidParams,
    pub nodes: DbnNodes,
    pub sigma_dy0: f64,
    pub sigma_v_lat: f64,
    /// P(LE) at or above which a lane change counts as detected.
    pub le_threshold: f64,
    /// Number of time slices in the unrolled network.
    pub window: usize,
    /// Uniform mass mixed into every transition.
    pub transition_floor: f64,
    pub denominator: Denominator,
    /// Jerk bound applied to the DBN's own braking, m/s³.
    pub comfort_jerk: f64,
    /// Look-ahead when choosing between braking and passing, s.
    pub rollout_horizon: f64,
    /// Gap left in front of the ego when sizing braking on the gap, m.
    pub stop_buffer: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            sigmoid: SigmoidParams::default(),
            nodes: DbnNodes::default(),
            sigma_dy0: 0.05,
            sigma_v_lat: 0.05,
            le_threshold: 0.5,
            window: 15,
            transition_floor: 1e-6,
            denominator: Denominator::ClosingSpeed,
            comfort_jerk: 10.0,
            rollout_horizon: 6.0,
            stop_buffer: 1.0,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), String> {
        self.nodes.dy0_lat.validate()?;
        self.nodes.v_lat.validate()?;
        if let Some(a) = &self.nodes.a_lat {
            a.validate()?;
        }
        if !(self.sigmoid.s_v > 0.0 && self.sigmoid.s_o > 0.0) {
            return Err("sigmoid scales s_v and s_o must be > 0".into());
        }
        if !(self.sigma_dy0 > 0.0 && self.sigma_v_lat > 0.0) {
            return Err("measurement sigmas must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.le_threshold) {
            return Err("le_threshold must lie in [0, 1]".into());
        }
        if self.window == 0 {
            return Err("window must hold at least one slice".into());
        }
        if !(0.0..1.0).contains(&self.transition_floor) {
            return Err("transition_floor must lie in [0, 1)".into());
        }
        if !(self.comfort_jerk > 0.0) {
            return Err("comfort_jerk must be > 0".into());
        }
        Ok(())
    }
}

/// Lateral velocity toward the ego (negative while approaching).
pub fn approach_velocity(ego: &VehicleState, cutin: &VehicleState) -> f64 {
    let side = if cutin.pos_lat >= ego.pos_lat { 1.0 } else { -1.0 };
    side * (cutin.v_lat - ego.v_lat)
}

/// Filtered (v_lat, dy0_lat) after running both node filters across the
/// window, starting from uniform beliefs at the oldest slice.
pub fn filter_window(window: &[Observation], spec: &NetworkSpec) -> (f64, f64) {
    let vn = &spec.nodes.v_lat;
    let dn = &spec.nodes.dy0_lat;
    let mut bv = DiscreteBelief::uniform(vn);
    let mut bd = DiscreteBelief::uniform(dn);
    let mut prev_t = None;
    for obs in window {
        if let Some(t0) = prev_t {
            let dt = obs.time - t0;
            let v = bv.mean(vn);
            bv = predict(&bv, vn, 0.0, spec.transition_floor);
            bd = predict(&bd, dn, v * dt, spec.transition_floor);
        }
        let v_meas = approach_velocity(&obs.ego, &obs.cutin);
        let d_meas = edge_to_marking(&obs.ego, &obs.cutin, obs.lane_width);
        bv = filter_update(&bv, vn, v_meas, spec.sigma_v_lat).belief;
        bd = filter_update(&bd, dn, d_meas, spec.sigma_dy0).belief;
        prev_t = Some(obs.time);
    }
    (bv.mean(vn), bd.mean(dn))
}

/// Evaluates all hypotheses for the newest observation in `window`.
pub fn evaluate_hypotheses(window: &[Observation], spec: &NetworkSpec, params: &SafetyParams) -> HypothesisResult {
    let obs = window.last().expect("window holds at least one observation");
    let (ego, cutin) = (&obs.ego, &obs.cutin);
    let (v_lat, dy0_lat) = filter_window(window, spec);

    let p_le = le_probability(v_lat, dy0_lat, &spec.sigmoid);
    let p_safe_lat = safe_lat(ego, cutin);
    let p_safe = safe_long(ego, cutin, params, spec.denominator);

    let lateral_offset = (cutin.pos_lat - ego.pos_lat).abs();
    let ttb = time_to_boundary(lateral_offset, v_lat);
    let margin = (ego.length + cutin.length) / 2.0;
    let pred = predict_positions(ttb.unwrap_or(0.0), ego.v_long, cutin.v_long, ego.pos_long, cutin.pos_long, margin);

    HypothesisResult {
        p_le,
        p_safe_lat,
        p_safe,
        ttb,
        predicted_overlap: pred.overlap,
        v_lat,
        dy0_lat,
    }
}

/// DBN verdict for the newest observation in `window`.
///
/// The lateral-evidence branch fires when P(LE) reaches the threshold and
/// any safety hypothesis is violated (or bumper contact is predicted). The
/// careful-driver rule is kept as a second branch, so the network never
/// detects later than the baseline it extends.
pub fn dbn_safety_check(window: &[Observation], spec: &NetworkSpec, params: &SafetyParams) -> (ModelDecision, HypothesisResult) {
    let h = evaluate_hypotheses(window, spec, params);
    let obs = window.last().expect("window holds at least one observation");

    let hazard = h.p_safe == 0.0 || h.predicted_overlap || h.p_safe_lat == 0.0;
    let le_branch = h.p_le >= spec.le_threshold && hazard;
    let cc_branch = cc_verdict(obs, params).is_unsafe;

    let decision = if le_branch {
        let by_prediction = h.predicted_overlap && h.p_safe == 1.0 && h.p_safe_lat == 1.0;
        if by_prediction {
            ModelDecision { is_unsafe: true, reason: Reason::PredictedOverlap, p_unsafe: h.p_le }
        } else {
            let reason = if h.p_safe_lat == 0.0 { Reason::LateralIntrusion } else { Reason::TtcViolation };
            ModelDecision { is_unsafe: true, reason, p_unsafe: 1.0 }
        }
    } else if cc_branch {
        ModelDecision::unsafe_because(Reason::TtcViolation)
    } else {
        let p = if hazard { h.p_le } else { 0.0 };
        ModelDecision { is_unsafe: false, reason: Reason::None, p_unsafe: p }
    };
    (decision, h)
}

/// Deceleration needed to drop to the cut-in speed before it reaches the
/// ego lane, or to stop closing within the current gap, whichever is larger.
pub fn required_deceleration(obs: &Observation, ttb: Option<f64>, spec: &NetworkSpec) -> f64 {
    let v_rel = obs.closing_speed();
    if v_rel <= 0.0 {
        return 0.0;
    }
    let by_boundary = match ttb {
        Some(t) if t > 0.0 => v_rel / t,
        _ => 0.0,
    };
    // half a second of closing is spent building up deceleration
    let room = (obs.gap() - spec.stop_buffer - 0.5 * v_rel).max(0.1);
    let by_gap = v_rel * v_rel / (2.0 * room);
    by_boundary.max(by_gap)
}

/// Longitudinal plan checked by [`rollout_collides`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Plan {
    /// Let go of any braking and keep the current speed.
    Hold,
    /// Brake towards `decel` under `jerk`.
    Brake { decel: f64, jerk: f64 },
}

/// Whether `plan` ends in footprint overlap within `horizon` seconds when
/// the cut-in keeps the estimated approach velocity `v_lat` (negative when
/// approaching). Braking rollouts stop once the ego is slower than a
/// cut-in ahead of it.
pub fn rollout_collides(obs: &Observation, v_lat: f64, plan: Plan, params: &SafetyParams, horizon: f64) -> bool {
    const DT: f64 = 0.1;
    let mut ego = obs.ego;
    let mut cut = obs.cutin;
    let side = (cut.pos_lat - ego.pos_lat).signum();
    cut.v_lat = if v_lat < 0.0 { v_lat * side } else { 0.0 };
    let cmd = match plan {
        Plan::Hold => AccelCommand { a_target: 0.0, mode: Mode::Release, jerk_limit: None },
        Plan::Brake { decel, jerk } => AccelCommand::brake(decel).with_jerk_limit(jerk),
    };
    let steps = (horizon / DT).ceil() as usize;
    for _ in 0..steps {
        let s = step(&ego, &cut, &cmd, params, DT);
        ego = s.ego;
        cut = s.cutin;
        if detect_crash(&ego, &cut) {
            return true;
        }
        if matches!(plan, Plan::Brake { .. }) && ego.v_long < cut.v_long && cut.pos_long > ego.pos_long {
            return false;
        }
    }
    false
}

/// The DBN packaged behind the safety-model interface.
#[derive(Debug, Clone)]
pub struct DbnModel {
    pub spec: NetworkSpec,
    pub params: SafetyParams,
    window: VecDeque<Observation>,
    last: HypothesisResult,
    ctl: ReactionController,
    escalated: bool,
}

impl DbnModel {
    pub fn new(spec: NetworkSpec, params: SafetyParams) -> Self {
        let cap = spec.window.max(1);
        Self {
            spec,
            params,
            window: VecDeque::with_capacity(cap),
            last: HypothesisResult::default(),
            ctl: ReactionController::new(0.0),
            escalated: false,
        }
    }

    pub fn last_hypotheses(&self) -> &HypothesisResult {
        &self.last
    }
}

impl SafetyModel for DbnModel {
    fn id(&self) -> &str {
        "dbn"
    }

    fn safety_check(&mut self, obs: &Observation) -> ModelDecision {
        if self.window.len() == self.spec.window.max(1) {
            self.window.pop_front();
        }
        self.window.push_back(*obs);
        let (d, h) = dbn_safety_check(self.window.make_contiguous(), &self.spec, &self.params);
        self.last = h;
        d
    }

    fn react(&mut self, decision: &ModelDecision, obs: &Observation, params: &SafetyParams) -> AccelCommand {
        // once the human-driver criterion holds, brake as hard as it does
        self.escalated |= cc_verdict(obs, params).is_unsafe;
        let v = self.last.v_lat;
        let h = self.spec.rollout_horizon;
        let idle = !self.ctl.is_braking() && !self.ctl.is_following();
        if idle && decision.is_unsafe && obs.cutin.pos_long >= obs.ego.pos_long {
            // keep going when only passing avoids contact
            let brake = Plan::Brake { decel: params.cc_max_deceleration, jerk: self.spec.comfort_jerk };
            if rollout_collides(obs, v, brake, params, h) && !rollout_collides(obs, v, Plan::Hold, params, h) {
                return AccelCommand::cruise();
            }
        }
        let need = required_deceleration(obs, self.last.ttb, &self.spec).min(params.cc_max_deceleration);
        if !self.escalated && decision.is_unsafe && !self.ctl.is_following() {
            let gentle = Plan::Brake { decel: need, jerk: self.spec.comfort_jerk };
            self.escalated = rollout_collides(obs, v, gentle, params, h);
        }
        let decel = if self.escalated { params.cc_max_deceleration } else { need };
        let cmd = self.ctl.command(decision, obs, params, decel);
        match cmd.mode {
            Mode::Brake | Mode::Follow => cmd.with_jerk_limit(self.spec.comfort_jerk),
            _ => cmd,
        }
    }
}
