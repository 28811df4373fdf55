//! Brute-force oracles and random generators shared by the property and
//! acceptance suites. Nothing here calls the code under test.
#![allow(dead_code)]

use cutin_core::sim::{Mode, Trace, VehicleState};
use rand::Rng;

pub const LENGTH: f64 = 4.5;
pub const WIDTH: f64 = 1.8;
pub const JERK_MAX: f64 = 12.65;
pub const DECEL_MAX: f64 = 0.774 * 9.81;

/// Steps two constant-speed points until the rear one reaches the front
/// one. `gap` is bumper to bumper.
pub fn ttc_by_stepping(gap: f64, v_rear: f64, v_front: f64, dt: f64) -> Option<f64> {
    if gap < 0.0 {
        return Some(0.0);
    }
    if v_rear <= v_front {
        return None;
    }
    let (mut x_rear, mut x_front, mut t) = (0.0, gap, 0.0);
    while x_rear < x_front {
        x_rear += v_rear * dt;
        x_front += v_front * dt;
        t += dt;
        if t > 1e6 {
            return None;
        }
    }
    Some(t)
}

/// Positions after `ttb` seconds, advanced in `dt` slices, and whether the
/// ego front reached past the cut-in rear.
pub fn overlap_by_stepping(ttb: f64, ve0: f64, vo0: f64, x_ego: f64, x_obj: f64, margin: f64, dt: f64) -> (f64, f64, bool) {
    let (mut xe, mut xo, mut t) = (x_ego, x_obj, 0.0);
    while t + dt <= ttb {
        xe += ve0 * dt;
        xo += vo0 * dt;
        t += dt;
    }
    let rest = ttb - t;
    xe += ve0 * rest;
    xo += vo0 * rest;
    (xe, xo, xe + margin > xo)
}

/// 1 when no sampled lateral coordinate lies strictly inside both bodies.
pub fn safe_lat_by_sampling(ego: &VehicleState, cut: &VehicleState, res: f64) -> f64 {
    let (e_lo, e_hi) = (ego.pos_lat - ego.width / 2.0, ego.pos_lat + ego.width / 2.0);
    let (c_lo, c_hi) = (cut.pos_lat - cut.width / 2.0, cut.pos_lat + cut.width / 2.0);
    let lo = e_lo.min(c_lo);
    let hi = e_hi.max(c_hi);
    let n = ((hi - lo) / res).ceil() as usize;
    for i in 0..=n {
        let y = lo + i as f64 * res;
        if y > e_lo && y < e_hi && y > c_lo && y < c_hi {
            return 0.0;
        }
    }
    1.0
}

/// Longitudinal safety by stepping the relative motion: safe when the cut-in
/// is behind, when nothing closes a positive gap, or when covering the gap
/// takes longer than `ttc_crit`.
pub fn safe_long_by_stepping(ego: &VehicleState, cut: &VehicleState, ttc_crit: f64, dt: f64) -> f64 {
    if cut.pos_long < ego.pos_long {
        return 1.0;
    }
    let gap = cut.pos_long - ego.pos_long - (ego.length + cut.length) / 2.0;
    let closing = ego.v_long - cut.v_long;
    if closing <= 0.0 {
        return if gap > 0.0 { 1.0 } else { 0.0 };
    }
    let (mut covered, mut t) = (0.0, 0.0);
    while covered < gap.abs() {
        covered += closing * dt;
        t += dt;
        if t > ttc_crit + 10.0 * dt {
            return 1.0;
        }
    }
    if t > ttc_crit {
        1.0
    } else {
        0.0
    }
}

/// Both vehicles brake from the current state, the rear at `b_rear` and
/// the front at `b_front`, until stopped. Returns the smallest gap seen.
pub fn rss_braking_min_gap(gap: f64, v_rear: f64, v_front: f64, b_rear: f64, b_front: f64, dt: f64) -> f64 {
    let (mut xr, mut xf) = (0.0, gap);
    let (mut vr, mut vf) = (v_rear, v_front);
    let mut min_gap = gap;
    while vr > 0.0 {
        let vr_next = (vr - b_rear * dt).max(0.0);
        let vf_next = (vf - b_front * dt).max(0.0);
        xr += 0.5 * (vr + vr_next) * dt;
        xf += 0.5 * (vf + vf_next) * dt;
        vr = vr_next;
        vf = vf_next;
        min_gap = min_gap.min(xf - xr);
    }
    min_gap
}

pub fn random_vehicle<R: Rng>(rng: &mut R) -> VehicleState {
    let mut v = VehicleState::new(rng.gen_range(-50.0..150.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..45.0));
    v.length = LENGTH;
    v.width = WIDTH;
    v
}

/// Per-tick bound violations of a trace: jerk, deceleration, and speed
/// growth while braking.
pub fn trace_violations(trace: &Trace) -> Vec<String> {
    let mut out = Vec::new();
    let dt = trace.config.dt;
    for w in trace.ticks.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let jerk = (b.ego.a_long - a.ego.a_long).abs() / dt;
        if jerk > JERK_MAX + 1e-9 {
            out.push(format!("t={:.1}: jerk {jerk}", b.time));
        }
        if b.command.mode == Mode::Brake && a.command.mode == Mode::Brake && b.ego.v_long > a.ego.v_long + 1e-12 {
            out.push(format!("t={:.1}: speed rose while braking", b.time));
        }
    }
    for t in &trace.ticks {
        if t.ego.a_long < -DECEL_MAX - 1e-9 {
            out.push(format!("t={:.1}: decel {}", t.time, -t.ego.a_long));
        }
    }
    out
}

/// Independent evaluation of the lane-change sigmoid in the form
/// 1 / (1 + e^{m x} / s), with the published constants.
pub fn le_reference(v_lat: f64, dy0_lat: f64) -> f64 {
    let f = |s: f64, m: f64, x: f64| 1.0 / (1.0 + (m * x).exp() / s);
    (f(0.062, 8.945, v_lat) * f(3.386, 7.313, dy0_lat)).min(1.0)
}
