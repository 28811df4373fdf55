//! Fixed-step kinematic simulation of an ego vehicle and a cut-in vehicle.
//!
//! Lateral coordinates are offsets from the ego lane center, positive toward
//! the adjacent lane the cut-in starts in. The cut-in moves toward zero with
//! a negative lateral velocity and stops once its center reaches the ego
//! lane center.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelDecision, Observation, SafetyModel, SafetyParams};

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_LANE_WIDTH: f64 = 3.5;
pub const DEFAULT_HORIZON: f64 = 15.0;
pub const DEFAULT_LENGTH: f64 = 4.5;
pub const DEFAULT_WIDTH: f64 = 1.8;
/// Upper bound on ego acceleration when recovering speed.
pub const A_COMFORT_MAX: f64 = 2.0;
/// Time an episode keeps running after the cut-in settles in the ego lane
/// with the ego slower than or following it.
pub const SETTLE_TIME: f64 = 5.0;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite state at tick {tick} (t = {time:.2} s): {what}")]
    NonFinite { tick: usize, time: f64, what: &'static str },
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pos_long: f64,
    pub pos_lat: f64,
    pub v_long: f64,
    pub v_lat: f64,
    pub a_long: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn new(pos_long: f64, pos_lat: f64, v_long: f64) -> Self {
        Self {
            pos_long,
            pos_lat,
            v_long,
            v_lat: 0.0,
            a_long: 0.0,
            length: DEFAULT_LENGTH,
            width: DEFAULT_WIDTH,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.pos_long,
            self.pos_lat,
            self.v_long,
            self.v_lat,
            self.a_long,
            self.length,
            self.width,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Initial center-to-center longitudinal distance, cut-in ahead.
    pub dx0: f64,
    /// Initial center-to-center lateral offset.
    pub dy0: f64,
    pub ve0: f64,
    pub vo0: f64,
    /// Cut-in lateral velocity, negative toward the ego lane.
    pub vy: f64,
    pub lane_width: f64,
    pub horizon: f64,
    pub dt: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            dx0: 41.0,
            dy0: DEFAULT_LANE_WIDTH,
            ve0: 25.0,
            vo0: 10.0 / 3.6,
            vy: -1.7,
            lane_width: DEFAULT_LANE_WIDTH,
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
        }
    }
}

impl ScenarioConfig {
    /// Builds a config from the km/h speeds and lateral speed magnitude used
    /// by the sweep grids.
    pub fn from_kmh(ego_kmh: f64, cutin_kmh: f64, lateral_speed: f64, dx0: f64) -> Self {
        Self {
            dx0,
            ve0: kmh_to_ms(ego_kmh),
            vo0: kmh_to_ms(cutin_kmh),
            vy: -lateral_speed.abs(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            self.dx0,
            self.dy0,
            self.ve0,
            self.vo0,
            self.vy,
            self.lane_width,
            self.horizon,
            self.dt,
        ];
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(SimError::InvalidConfig("non-finite field".into()));
        }
        if self.dx0 <= 0.0 {
            return Err(SimError::InvalidConfig(format!("dx0 must be > 0, got {}", self.dx0)));
        }
        if self.horizon <= 0.0 || self.dt <= 0.0 {
            return Err(SimError::InvalidConfig("horizon and dt must be > 0".into()));
        }
        if self.ve0 < 0.0 || self.vo0 < 0.0 {
            return Err(SimError::InvalidConfig("speeds must be non-negative".into()));
        }
        if self.lane_width <= 0.0 {
            return Err(SimError::InvalidConfig("lane_width must be > 0".into()));
        }
        Ok(())
    }

    /// Short stable tag used in output file names.
    pub fn tag(&self) -> String {
        format!(
            "e{:.0}_c{:.0}_vy{:.2}_d{:.1}",
            self.ve0 * 3.6,
            self.vo0 * 3.6,
            self.vy.abs(),
            self.dx0
        )
    }
}

pub fn kmh_to_ms(kmh: f64) -> f64 {
    kmh / 3.6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cruise,
    Brake,
    Follow,
    Release,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Cruise => "cruise",
            Mode::Brake => "brake",
            Mode::Follow => "follow",
            Mode::Release => "release",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelCommand {
    /// Target longitudinal acceleration, negative = braking.
    pub a_target: f64,
    pub mode: Mode,
    /// Optional tighter jerk bound requested by the model.
    pub jerk_limit: Option<f64>,
}

impl AccelCommand {
    pub fn cruise() -> Self {
        Self { a_target: 0.0, mode: Mode::Cruise, jerk_limit: None }
    }

    pub fn brake(decel: f64) -> Self {
        Self { a_target: -decel.abs(), mode: Mode::Brake, jerk_limit: None }
    }

    pub fn with_jerk_limit(mut self, jerk: f64) -> Self {
        self.jerk_limit = Some(jerk);
        self
    }
}

/// Result of one integration step.
#[derive(Debug, Clone, Copy)]
pub struct Stepped {
    pub ego: VehicleState,
    pub cutin: VehicleState,
    /// Number of clamp events applied to the command this step.
    pub clamps: u32,
}

/// Advances both vehicles by `dt` with semi-implicit Euler.
///
/// Ego acceleration follows the command with its rate of change bounded by
/// the jerk limit (release mode instead ramps at the release rate per tick),
/// and the result is kept within `[-cc_max_deceleration, A_COMFORT_MAX]`.
pub fn step(
    ego: &VehicleState,
    cutin: &VehicleState,
    cmd: &AccelCommand,
    params: &SafetyParams,
    dt: f64,
) -> Stepped {
    let mut clamps = 0;
    let lo = -params.cc_max_deceleration;
    let hi = A_COMFORT_MAX;

    let mut target = cmd.a_target;
    if !target.is_finite() {
        target = 0.0;
        clamps += 1;
    }
    if target < lo || target > hi {
        target = target.clamp(lo, hi);
        clamps += 1;
    }

    let max_delta = match cmd.mode {
        Mode::Release => params.cc_release_deceleration,
        _ => {
            let jerk = cmd
                .jerk_limit
                .filter(|j| j.is_finite() && *j > 0.0)
                .map_or(params.cc_min_jerk, |j| j.min(params.cc_min_jerk));
            jerk * dt
        }
    };
    let delta = target - ego.a_long;
    let a = if delta.abs() > max_delta {
        clamps += 1;
        ego.a_long + max_delta.copysign(delta)
    } else {
        target
    }
    .clamp(lo, hi);

    let mut e = *ego;
    e.a_long = a;
    e.v_long = (ego.v_long + a * dt).max(0.0);
    e.pos_long += e.v_long * dt;

    let mut c = *cutin;
    c.pos_long += c.v_long * dt;
    if c.v_lat != 0.0 {
        let lat = c.pos_lat + c.v_lat * dt;
        let target_lat = ego.pos_lat;
        let crossed = (c.pos_lat - target_lat) * (lat - target_lat) <= 0.0
            || (lat - target_lat).abs() < TIME_EPS;
        let approaching = (c.pos_lat - target_lat).signum() != c.v_lat.signum();
        if crossed && approaching {
            c.pos_lat = target_lat;
            c.v_lat = 0.0;
        } else {
            c.pos_lat = lat;
        }
    }

    Stepped { ego: e, cutin: c, clamps }
}

/// Footprint overlap of two vehicles in both axes (strict).
pub fn detect_crash(a: &VehicleState, b: &VehicleState) -> bool {
    let dx = (a.pos_long - b.pos_long).abs();
    let dy = (a.pos_lat - b.pos_lat).abs();
    dx < (a.length + b.length) / 2.0 && dy < (a.width + b.width) / 2.0
}

/// Time-to-collision for a bumper gap and closing speed.
///
/// A negative gap means the vehicles already overlap longitudinally and
/// yields zero; a non-positive closing speed has no collision course.
pub fn compute_ttc(gap: f64, v_rel: f64) -> Option<f64> {
    if gap < 0.0 {
        Some(0.0)
    } else if v_rel <= 0.0 {
        None
    } else {
        Some(gap / v_rel)
    }
}

/// Bumper-to-bumper gap from the ego front to the cut-in rear.
pub fn bumper_gap(ego: &VehicleState, cutin: &VehicleState) -> f64 {
    cutin.pos_long - ego.pos_long - (ego.length + cutin.length) / 2.0
}

/// Signed distance from the cut-in's near edge to the ego lane marking,
/// positive while the edge is still outside the ego lane.
pub fn edge_to_marking(ego: &VehicleState, cutin: &VehicleState, lane_width: f64) -> f64 {
    (cutin.pos_lat - ego.pos_lat).abs() - cutin.width / 2.0 - lane_width / 2.0
}

/// TTC toward the cut-in when it is ahead of the ego and has put part of its
/// footprint into the ego lane.
pub fn relevant_ttc(ego: &VehicleState, cutin: &VehicleState, lane_width: f64) -> Option<f64> {
    if cutin.pos_long < ego.pos_long || edge_to_marking(ego, cutin, lane_width) >= 0.0 {
        return None;
    }
    compute_ttc(bumper_gap(ego, cutin), ego.v_long - cutin.v_long)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tick {
    pub time: f64,
    pub ego: VehicleState,
    pub cutin: VehicleState,
    pub command: AccelCommand,
    pub decision: ModelDecision,
    pub ttc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trace {
    pub model_id: String,
    pub config: ScenarioConfig,
    pub ticks: Vec<Tick>,
    pub crash: bool,
    pub crash_time: Option<f64>,
    pub detection_time: Option<f64>,
    pub min_ttc: Option<f64>,
    pub clamp_events: u32,
}

impl Trace {
    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    /// Time of the first tick whose command brakes with nonzero deceleration.
    pub fn first_brake_time(&self) -> Option<f64> {
        self.ticks
            .iter()
            .find(|t| t.command.mode == Mode::Brake && t.command.a_target < 0.0)
            .map(|t| t.time)
    }

    /// Time of the first tick with the ego actually decelerating.
    pub fn first_decel_time(&self) -> Option<f64> {
        self.ticks.iter().find(|t| t.ego.a_long < -1e-12).map(|t| t.time)
    }

    /// Per-tick jerk, zero on the first tick.
    pub fn jerk(&self) -> Vec<f64> {
        let dt = self.dt();
        let mut out = Vec::with_capacity(self.ticks.len());
        let mut prev = None;
        for t in &self.ticks {
            out.push(prev.map_or(0.0, |p: f64| (t.ego.a_long - p) / dt));
            prev = Some(t.ego.a_long);
        }
        out
    }

    pub fn max_abs_jerk(&self) -> f64 {
        self.jerk().into_iter().fold(0.0, |m, j| m.max(j.abs()))
    }

    /// Largest deceleration magnitude seen, zero if the ego never brakes.
    pub fn max_decel(&self) -> f64 {
        self.ticks.iter().fold(0.0, |m, t| m.max(-t.ego.a_long))
    }

    /// CSV export with one row per tick.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,ego_x,ego_y,ego_v,ego_a,cut_x,cut_y,cut_v,ttc,mode,decision\n");
        for t in &self.ticks {
            let ttc = t.ttc.map(|v| format!("{v:.4}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{:.2},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{},{}",
                t.time,
                t.ego.pos_long,
                t.ego.pos_lat,
                t.ego.v_long,
                t.ego.a_long,
                t.cutin.pos_long,
                t.cutin.pos_lat,
                t.cutin.v_long,
                ttc,
                t.command.mode.as_str(),
                if t.decision.is_unsafe { "unsafe" } else { "safe" },
            );
        }
        out
    }
}

/// Initial states for a scenario: ego at the origin of its lane, cut-in
/// `dx0` ahead and `dy0` to the side.
pub fn initial_states(config: &ScenarioConfig) -> (VehicleState, VehicleState) {
    let ego = VehicleState::new(0.0, 0.0, config.ve0);
    let mut cutin = VehicleState::new(config.dx0, config.dy0, config.vo0);
    cutin.v_lat = config.vy;
    (ego, cutin)
}

/// Runs one scenario until crash, horizon, or settled following.
pub fn run_scenario(
    config: &ScenarioConfig,
    model: &mut dyn SafetyModel,
    params: &SafetyParams,
) -> Result<Trace, SimError> {
    config.validate()?;
    let (mut ego, mut cutin) = initial_states(config);
    let dt = config.dt;
    let max_ticks = (config.horizon / dt + TIME_EPS).floor() as usize;

    let mut trace = Trace {
        model_id: model.id().to_string(),
        config: *config,
        ticks: Vec::with_capacity(max_ticks + 1),
        crash: false,
        crash_time: None,
        detection_time: None,
        min_ttc: None,
        clamp_events: 0,
    };
    let mut settled_at: Option<f64> = None;

    for k in 0..=max_ticks {
        let time = k as f64 * dt;
        if !ego.is_finite() {
            return Err(SimError::NonFinite { tick: k, time, what: "ego state" });
        }
        if !cutin.is_finite() {
            return Err(SimError::NonFinite { tick: k, time, what: "cut-in state" });
        }

        let obs = Observation { ego, cutin, time, lane_width: config.lane_width };
        let decision = model.safety_check(&obs);
        let command = model.react(&decision, &obs, params);
        if !command.a_target.is_finite() {
            return Err(SimError::NonFinite { tick: k, time, what: "command" });
        }
        if decision.is_unsafe && trace.detection_time.is_none() {
            trace.detection_time = Some(time);
        }
        let ttc = relevant_ttc(&ego, &cutin, config.lane_width);
        if let Some(v) = ttc {
            trace.min_ttc = Some(trace.min_ttc.map_or(v, |m: f64| m.min(v)));
        }
        trace.ticks.push(Tick { time, ego, cutin, command, decision, ttc });

        if detect_crash(&ego, &cutin) {
            trace.crash = true;
            trace.crash_time = Some(time);
            break;
        }

        if settled_at.is_none() && cutin.v_lat == 0.0 && cutin.pos_lat == ego.pos_lat {
            settled_at = Some(time);
        }
        if let Some(ts) = settled_at {
            let following = command.mode == Mode::Follow || ego.v_long <= cutin.v_long;
            if following && time - ts >= SETTLE_TIME - TIME_EPS {
                break;
            }
        }
        if k == max_ticks {
            break;
        }

        let next = step(&ego, &cutin, &command, params, dt);
        trace.clamp_events += next.clamps;
        ego = next.ego;
        cutin = next.cutin;
    }
    Ok(trace)
}
