//! Safety-model interface and the baseline models.
//!
//! Every model answers two questions per tick: `safety_check` (is the
//! situation unsafe?) and `react` (what longitudinal command follows from
//! that verdict?). The baselines share one braking state machine,
//! [`ReactionController`], and differ in their trigger rule and latency.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dbn::{DbnModel, NetworkSpec};
use crate::sim::{bumper_gap, compute_ttc, edge_to_marking, AccelCommand, Mode, VehicleState};

const TIME_EPS: f64 = 1e-9;

/// Braking envelope of the careful-driver baseline, shared by all models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyParams {
    /// Reaction time, s.
    pub cc_rt: f64,
    /// Jerk bound while building up braking, m/s³.
    pub cc_min_jerk: f64,
    /// Maximum deceleration magnitude, m/s².
    pub cc_max_deceleration: f64,
    /// Deceleration released per tick when a brake is abandoned, m/s².
    pub cc_release_deceleration: f64,
    /// TTC below which a cut-in is critical, s.
    pub cc_critical_ttc: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            cc_rt: 0.75,
            cc_min_jerk: 12.65,
            cc_max_deceleration: 0.774 * 9.81,
            cc_release_deceleration: 0.4,
            cc_critical_ttc: 2.0,
        }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("cc_rt", self.cc_rt),
            ("cc_min_jerk", self.cc_min_jerk),
            ("cc_max_deceleration", self.cc_max_deceleration),
            ("cc_release_deceleration", self.cc_release_deceleration),
            ("cc_critical_ttc", self.cc_critical_ttc),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    None,
    LateralIntrusion,
    TtcViolation,
    PredictedOverlap,
    /// Longitudinal gap below the RSS safe distance.
    SafeDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDecision {
    pub is_unsafe: bool,
    pub reason: Reason,
    pub p_unsafe: f64,
}

impl ModelDecision {
    pub fn safe() -> Self {
        Self { is_unsafe: false, reason: Reason::None, p_unsafe: 0.0 }
    }

    pub fn unsafe_because(reason: Reason) -> Self {
        Self { is_unsafe: true, reason, p_unsafe: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ego: VehicleState,
    pub cutin: VehicleState,
    pub time: f64,
    pub lane_width: f64,
}

impl Observation {
    pub fn gap(&self) -> f64 {
        bumper_gap(&self.ego, &self.cutin)
    }

    pub fn closing_speed(&self) -> f64 {
        self.ego.v_long - self.cutin.v_long
    }

    pub fn ttc(&self) -> Option<f64> {
        compute_ttc(self.gap(), self.closing_speed())
    }

    pub fn is_finite(&self) -> bool {
        self.ego.is_finite() && self.cutin.is_finite() && self.time.is_finite()
    }
}

pub trait SafetyModel: Send {
    fn id(&self) -> &str;
    fn safety_check(&mut self, obs: &Observation) -> ModelDecision;
    fn react(&mut self, decision: &ModelDecision, obs: &Observation, params: &SafetyParams) -> AccelCommand;
}

/// Lateral intrusion margin tolerated before the careful driver reacts, m.
pub const WANDERING_MARGIN: f64 = 0.375;
/// Intrusion at which a cut-in counts as detectable for the Reg157 model, m.
pub const REG157_DETECT_MARGIN: f64 = 0.3;
/// Time the Reg157 model holds an unsafe verdict once raised, s.
pub const REG157_DEBOUNCE: f64 = 1.0;

/// How far the cut-in's near edge has crossed into the ego lane, m.
pub fn lateral_intrusion(obs: &Observation) -> f64 {
    -edge_to_marking(&obs.ego, &obs.cutin, obs.lane_width)
}

/// True once the cut-in's near edge is more than the wandering margin
/// inside the ego lane.
pub fn cc_lateral_trigger(obs: &Observation, lane_width: f64) -> bool {
    -edge_to_marking(&obs.ego, &obs.cutin, lane_width) > WANDERING_MARGIN
}

fn ttc_below(obs: &Observation, critical: f64) -> bool {
    obs.cutin.pos_long >= obs.ego.pos_long && obs.ttc().is_some_and(|t| t < critical)
}

/// Careful-driver verdict: intrusion past the wandering zone with TTC
/// below the critical value.
pub fn cc_verdict(obs: &Observation, params: &SafetyParams) -> ModelDecision {
    if cc_lateral_trigger(obs, obs.lane_width) && ttc_below(obs, params.cc_critical_ttc) {
        ModelDecision::unsafe_because(Reason::TtcViolation)
    } else {
        ModelDecision::safe()
    }
}

/// Proportional gap controller used once the ego has dropped below the
/// cut-in speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowParams {
    pub time_gap: f64,
    pub standstill_gap: f64,
    pub k_gap: f64,
    pub k_speed: f64,
}

impl Default for FollowParams {
    fn default() -> Self {
        Self { time_gap: 2.0, standstill_gap: 2.0, k_gap: 0.1, k_speed: 0.6 }
    }
}

impl FollowParams {
    pub fn accel(&self, obs: &Observation, params: &SafetyParams) -> f64 {
        let desired = self.standstill_gap + self.time_gap * obs.ego.v_long;
        let a = self.k_gap * (obs.gap() - desired) + self.k_speed * (obs.cutin.v_long - obs.ego.v_long);
        a.clamp(-params.cc_max_deceleration, crate::sim::A_COMFORT_MAX)
    }
}

/// Braking state machine: pending (latency) -> brake -> follow.
///
/// An unsafe verdict starts a timer; once `latency` has elapsed the brake
/// latches and holds until the ego is slower than the cut-in, after which
/// the follow controller takes over. A verdict that clears while the timer
/// is still pending cancels the brake and releases any deceleration.
#[derive(Debug, Clone)]
pub struct ReactionController {
    pub latency: f64,
    pub follow: FollowParams,
    pending_since: Option<f64>,
    braking: bool,
    following: bool,
}

impl ReactionController {
    pub fn new(latency: f64) -> Self {
        Self {
            latency,
            follow: FollowParams::default(),
            pending_since: None,
            braking: false,
            following: false,
        }
    }

    pub fn is_braking(&self) -> bool {
        self.braking
    }

    pub fn is_following(&self) -> bool {
        self.following
    }

    /// Advances the state machine and returns the command; `brake_decel`
    /// is the deceleration magnitude used while the brake is latched.
    pub fn command(
        &mut self,
        decision: &ModelDecision,
        obs: &Observation,
        params: &SafetyParams,
        brake_decel: f64,
    ) -> AccelCommand {
        let cutin_ahead = obs.cutin.pos_long >= obs.ego.pos_long;
        if self.braking && obs.ego.v_long < obs.cutin.v_long {
            self.braking = false;
            self.following = true;
        }
        if self.following {
            if !cutin_ahead {
                return AccelCommand::cruise();
            }
            let a = self.follow.accel(obs, params);
            return AccelCommand { a_target: a, mode: Mode::Follow, jerk_limit: None };
        }
        if self.braking {
            if !cutin_ahead {
                // the ego ended up in front; braking would only invite a rear-end
                self.braking = false;
                return AccelCommand { a_target: 0.0, mode: Mode::Release, jerk_limit: None };
            }
            return AccelCommand::brake(brake_decel.min(params.cc_max_deceleration));
        }
        if decision.is_unsafe && cutin_ahead {
            let since = *self.pending_since.get_or_insert(obs.time);
            if obs.time - since >= self.latency - TIME_EPS {
                self.braking = true;
                return AccelCommand::brake(brake_decel.min(params.cc_max_deceleration));
            }
            return AccelCommand::cruise();
        }
        if self.pending_since.take().is_some() || obs.ego.a_long < 0.0 {
            return AccelCommand { a_target: 0.0, mode: Mode::Release, jerk_limit: None };
        }
        AccelCommand::cruise()
    }
}

/// Careful-and-competent human driver baseline.
#[derive(Debug, Clone)]
pub struct CcModel {
    pub params: SafetyParams,
    ctl: ReactionController,
}

impl CcModel {
    pub fn new(params: SafetyParams) -> Self {
        Self { params, ctl: ReactionController::new(params.cc_rt) }
    }
}

impl SafetyModel for CcModel {
    fn id(&self) -> &str {
        "cc"
    }

    fn safety_check(&mut self, obs: &Observation) -> ModelDecision {
        cc_verdict(obs, &self.params)
    }

    fn react(&mut self, decision: &ModelDecision, obs: &Observation, params: &SafetyParams) -> AccelCommand {
        self.ctl.command(decision, obs, params, params.cc_max_deceleration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RssParams {
    pub response_time: f64,
    /// Worst-case ego acceleration during the response time.
    pub accel_max: f64,
    /// Minimum braking the ego commits to.
    pub brake_min: f64,
    /// Maximum braking of the lead vehicle.
    pub brake_max: f64,
}

impl Default for RssParams {
    fn default() -> Self {
        Self {
            response_time: 0.75,
            accel_max: 2.0,
            brake_min: 4.0,
            brake_max: 0.774 * 9.81,
        }
    }
}

/// Minimum safe longitudinal distance between a rear vehicle at `v_rear`
/// and a front vehicle at `v_front`.
pub fn rss_safe_distance(v_rear: f64, v_front: f64, p: &RssParams) -> f64 {
    let rho = p.response_time;
    let v_resp = v_rear + rho * p.accel_max;
    let d = v_rear * rho + 0.5 * p.accel_max * rho * rho + v_resp * v_resp / (2.0 * p.brake_min)
        - v_front * v_front / (2.0 * p.brake_max);
    d.max(0.0)
}

/// Responsibility-sensitive safety baseline.
#[derive(Debug, Clone)]
pub struct RssModel {
    pub rss: RssParams,
    ctl: ReactionController,
}

impl RssModel {
    pub fn new(rss: RssParams) -> Self {
        Self { rss, ctl: ReactionController::new(rss.response_time) }
    }
}

impl SafetyModel for RssModel {
    fn id(&self) -> &str {
        "rss"
    }

    fn safety_check(&mut self, obs: &Observation) -> ModelDecision {
        let ahead = obs.cutin.pos_long >= obs.ego.pos_long;
        if ahead
            && lateral_intrusion(obs) > 0.0
            && obs.gap() < rss_safe_distance(obs.ego.v_long, obs.cutin.v_long, &self.rss)
        {
            ModelDecision::unsafe_because(Reason::SafeDistance)
        } else {
            ModelDecision::safe()
        }
    }

    fn react(&mut self, decision: &ModelDecision, obs: &Observation, params: &SafetyParams) -> AccelCommand {
        self.ctl.command(decision, obs, params, params.cc_max_deceleration)
    }
}

/// Regulation-style model: detectable intrusion plus critical TTC, with
/// the verdict held for a debounce period once raised.
#[derive(Debug, Clone)]
pub struct Reg157Model {
    pub params: SafetyParams,
    pub debounce: f64,
    raised_at: Option<f64>,
    ctl: ReactionController,
}

impl Reg157Model {
    pub fn new(params: SafetyParams) -> Self {
        Self {
            params,
            debounce: REG157_DEBOUNCE,
            raised_at: None,
            ctl: ReactionController::new(params.cc_rt),
        }
    }
}

impl SafetyModel for Reg157Model {
    fn id(&self) -> &str {
        "reg157"
    }

    fn safety_check(&mut self, obs: &Observation) -> ModelDecision {
        let detectable = lateral_intrusion(obs) >= REG157_DETECT_MARGIN;
        if detectable && ttc_below(obs, self.params.cc_critical_ttc) {
            self.raised_at.get_or_insert(obs.time);
            return ModelDecision::unsafe_because(Reason::TtcViolation);
        }
        match self.raised_at {
            Some(t0) if obs.time - t0 < self.debounce - TIME_EPS => {
                ModelDecision::unsafe_because(Reason::TtcViolation)
            }
            _ => {
                self.raised_at = None;
                ModelDecision::safe()
            }
        }
    }

    fn react(&mut self, decision: &ModelDecision, obs: &Observation, params: &SafetyParams) -> AccelCommand {
        self.ctl.command(decision, obs, params, params.cc_max_deceleration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Cc,
    Rss,
    Reg157,
    Dbn,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Cc, ModelId::Rss, ModelId::Reg157, ModelId::Dbn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Cc => "cc",
            ModelId::Rss => "rss",
            ModelId::Reg157 => "reg157",
            ModelId::Dbn => "dbn",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownModel(pub String);

impl fmt::Display for UnknownModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown model id `{}` (valid: cc, rss, reg157, dbn)", self.0)
    }
}

impl std::error::Error for UnknownModel {}

impl FromStr for ModelId {
    type Err = UnknownModel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cc" => Ok(ModelId::Cc),
            "rss" => Ok(ModelId::Rss),
            "reg157" => Ok(ModelId::Reg157),
            "dbn" => Ok(ModelId::Dbn),
            _ => Err(UnknownModel(s.to_string())),
        }
    }
}

/// Everything needed to build a fresh model instance for one scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSuite {
    pub params: SafetyParams,
    pub rss: RssParams,
    pub dbn: NetworkSpec,
}

impl ModelSuite {
    pub fn build(&self, id: ModelId) -> Box<dyn SafetyModel> {
        match id {
            ModelId::Cc => Box::new(CcModel::new(self.params)),
            ModelId::Rss => Box::new(RssModel::new(self.rss)),
            ModelId::Reg157 => Box::new(Reg157Model::new(self.params)),
            ModelId::Dbn => Box::new(DbnModel::new(self.dbn.clone(), self.params)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs_at(cut_lat: f64, gap_center: f64, ve: f64, vc: f64, time: f64) -> Observation {
        let ego = VehicleState::new(0.0, 0.0, ve);
        let cutin = VehicleState::new(gap_center, cut_lat, vc);
        Observation { ego, cutin, time, lane_width: 3.5 }
    }

    #[test]
    fn lateral_trigger_examples() {
        // centered in adjacent lane
        assert!(!cc_lateral_trigger(&obs_at(3.5, 30.0, 20.0, 10.0, 0.0), 3.5));
        // edge 0.40 m inside: center at 1.75 + 0.9 - 0.40
        assert!(cc_lateral_trigger(&obs_at(2.25, 30.0, 20.0, 10.0, 0.0), 3.5));
        // edge exactly on the marking
        assert!(!cc_lateral_trigger(&obs_at(2.65, 30.0, 20.0, 10.0, 0.0), 3.5));
    }

    #[test]
    fn cc_safety_check_examples() {
        let mut cc = CcModel::new(SafetyParams::default());
        assert!(!cc.safety_check(&obs_at(3.5, 30.0, 25.0, 2.78, 0.0)).is_unsafe);
        // straddling the marking, gap 22.5 m closing at 15 m/s: TTC 1.5 s
        let d = cc.safety_check(&obs_at(1.75, 27.0, 25.0, 10.0, 0.0));
        assert!(d.is_unsafe);
        assert_eq!(d.reason, Reason::TtcViolation);
        assert_eq!(d.p_unsafe, 1.0);
        // same geometry but TTC 3 s
        assert!(!cc.safety_check(&obs_at(1.75, 49.5, 25.0, 10.0, 0.0)).is_unsafe);
    }

    #[test]
    fn rss_distance_matches_hand_evaluation() {
        let p = RssParams::default();
        // 25 m/s behind 2.78 m/s, evaluated term by term
        let rho: f64 = 0.75;
        let expected = 25.0 * rho + 0.5 * 2.0 * rho * rho + (25.0 + rho * 2.0).powi(2) / 8.0
            - 2.78f64.powi(2) / (2.0 * 0.774 * 9.81);
        assert!((rss_safe_distance(25.0, 2.78, &p) - expected).abs() < 1e-12);
        assert_eq!(rss_safe_distance(0.0, 40.0, &p), 0.0);
    }

    #[test]
    fn rss_large_gap_is_safe() {
        let mut rss = RssModel::new(RssParams::default());
        let dmin = rss_safe_distance(20.0, 15.0, &rss.rss);
        let o = obs_at(1.0, dmin + 4.5 + 1.0, 20.0, 15.0, 0.0);
        assert!(!rss.safety_check(&o).is_unsafe);
        let o = obs_at(1.0, dmin + 4.5 - 1.0, 20.0, 15.0, 0.0);
        assert!(rss.safety_check(&o).is_unsafe);
    }

    #[test]
    fn safe_without_pending_cruises() {
        let mut cc = CcModel::new(SafetyParams::default());
        let o = obs_at(3.5, 50.0, 20.0, 10.0, 0.0);
        let d = cc.safety_check(&o);
        let c = cc.react(&d, &o, &SafetyParams::default());
        assert_eq!(c.mode, Mode::Cruise);
        assert_eq!(c.a_target, 0.0);
    }

    #[test]
    fn brake_follows_reaction_time() {
        let p = SafetyParams::default();
        let mut ctl = ReactionController::new(p.cc_rt);
        let unsafe_d = ModelDecision::unsafe_because(Reason::TtcViolation);
        let c = ctl.command(&unsafe_d, &obs_at(1.5, 20.0, 20.0, 10.0, 1.0), &p, p.cc_max_deceleration);
        assert_eq!(c.mode, Mode::Cruise);
        let c = ctl.command(&unsafe_d, &obs_at(1.5, 19.0, 20.0, 10.0, 1.7), &p, p.cc_max_deceleration);
        assert_eq!(c.mode, Mode::Cruise);
        let c = ctl.command(&unsafe_d, &obs_at(1.5, 18.0, 20.0, 10.0, 1.75), &p, p.cc_max_deceleration);
        assert_eq!(c.mode, Mode::Brake);
        assert!((c.a_target + p.cc_max_deceleration).abs() < 1e-12);
    }

    #[test]
    fn pending_brake_is_cancelled() {
        let p = SafetyParams::default();
        let mut ctl = ReactionController::new(p.cc_rt);
        let u = ModelDecision::unsafe_because(Reason::TtcViolation);
        ctl.command(&u, &obs_at(1.5, 20.0, 20.0, 10.0, 1.0), &p, 7.0);
        let c = ctl.command(&ModelDecision::safe(), &obs_at(1.5, 20.0, 20.0, 10.0, 1.3), &p, 7.0);
        assert_eq!(c.mode, Mode::Release);
        // the timer restarts from the next unsafe verdict
        let c = ctl.command(&u, &obs_at(1.5, 20.0, 20.0, 10.0, 1.9), &p, 7.0);
        assert_eq!(c.mode, Mode::Cruise);
        assert!(!ctl.is_braking());
    }

    #[test]
    fn slower_than_cutin_switches_to_follow() {
        let p = SafetyParams::default();
        let mut ctl = ReactionController::new(0.0);
        let u = ModelDecision::unsafe_because(Reason::TtcViolation);
        let c = ctl.command(&u, &obs_at(0.0, 20.0, 20.0, 10.0, 0.0), &p, 7.0);
        assert_eq!(c.mode, Mode::Brake);
        let c = ctl.command(&u, &obs_at(0.0, 15.0, 9.9, 10.0, 2.0), &p, 7.0);
        assert_eq!(c.mode, Mode::Follow);
        assert!(ctl.is_following());
    }

    #[test]
    fn reg157_holds_verdict_for_debounce() {
        let mut m = Reg157Model::new(SafetyParams::default());
        assert!(m.safety_check(&obs_at(1.75, 27.0, 25.0, 10.0, 1.0)).is_unsafe);
        // geometry no longer critical but within the hold period
        assert!(m.safety_check(&obs_at(3.5, 80.0, 25.0, 10.0, 1.5)).is_unsafe);
        assert!(!m.safety_check(&obs_at(3.5, 80.0, 25.0, 10.0, 2.0)).is_unsafe);
    }

    #[test]
    fn model_ids_parse() {
        for id in ModelId::ALL {
            assert_eq!(id.as_str().parse::<ModelId>().unwrap(), id);
        }
        let err = "fsm".parse::<ModelId>().unwrap_err();
        assert!(err.to_string().contains("cc, rss, reg157, dbn"));
    }
}
