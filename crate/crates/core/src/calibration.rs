//! Fitting the lane-change sigmoid to labeled samples.
//!
//! The two scale constants are optimized in log space, so every iterate is
//! a valid probability surface.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dbn::{approach_velocity, le_probability, NodeSpec, SigmoidParams};
use crate::sim::{edge_to_marking, initial_states, step, AccelCommand, ScenarioConfig, SimError};
use crate::models::SafetyParams;

/// Fewest samples accepted by [`fit_sigmoid`].
pub const MIN_SAMPLES: usize = 20;
pub const MAX_ITERATIONS: usize = 500;
pub const REL_TOL: f64 = 1e-10;
const LAMBDA_MAX: f64 = 1e12;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index}: {reason}")]
    BadSample { index: usize, reason: String },
    #[error("{path}: line {line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub v_lat: f64,
    pub dy0_lat: f64,
    pub label: f64,
}

/// How a tick of a cut-in run is labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// 1 from the tick the near edge crosses the marking until the cut-in
    /// settles in the ego lane.
    #[default]
    EdgeCrossing,
    /// 1 on every tick with lateral motion toward the ego lane.
    LateralMotion,
}

/// Configuration the sample generator runs by default: 100 km/h against
/// 60 km/h.
pub fn default_calibration_config(lateral_speed: f64) -> ScenarioConfig {
    ScenarioConfig::from_kmh(100.0, 60.0, lateral_speed, 50.0)
}

/// One sample per tick of a cruising ego next to the configured cut-in.
pub fn generate_samples(config: &ScenarioConfig, rule: LabelRule) -> Result<Vec<CalibrationSample>, CalibrationError> {
    config.validate()?;
    let params = SafetyParams::default();
    let (mut ego, mut cut) = initial_states(config);
    let ticks = (config.horizon / config.dt).round() as usize;
    let mut out = Vec::with_capacity(ticks + 1);
    let mut crossed = false;
    for _ in 0..=ticks {
        let v_lat = approach_velocity(&ego, &cut);
        let dy0_lat = edge_to_marking(&ego, &cut, config.lane_width);
        let moving = v_lat < 0.0;
        crossed |= dy0_lat <= 0.0;
        let label = match rule {
            LabelRule::EdgeCrossing => crossed && moving,
            LabelRule::LateralMotion => moving,
        };
        out.push(CalibrationSample { v_lat, dy0_lat, label: if label { 1.0 } else { 0.0 } });
        let s = step(&ego, &cut, &AccelCommand::cruise(), &params, config.dt);
        ego = s.ego;
        cut = s.cutin;
    }
    Ok(out)
}

/// Samples whose labels are the sigmoid itself, on the node grids.
pub fn samples_from_params(p: &SigmoidParams, v_node: &NodeSpec, d_node: &NodeSpec) -> Vec<CalibrationSample> {
    let mut out = Vec::with_capacity(v_node.state_count() * d_node.state_count());
    for i in 0..v_node.state_count() {
        for j in 0..d_node.state_count() {
            let (v_lat, dy0_lat) = (v_node.value(i), d_node.value(j));
            out.push(CalibrationSample { v_lat, dy0_lat, label: le_probability(v_lat, dy0_lat, p) });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: SigmoidParams,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Only one label value was present.
    pub degenerate: bool,
    /// Loss of every accepted iterate, starting with the initial guess.
    pub loss_history: Vec<f64>,
}

fn sigma(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// theta = (ln s_v, m_v, ln s_o, m_o); factor = sigma(ln s - m x)
fn model(theta: &[f64; 4], s: &CalibrationSample) -> (f64, [f64; 4]) {
    let fv = sigma(theta[0] - theta[1] * s.v_lat);
    let fo = sigma(theta[2] - theta[3] * s.dy0_lat);
    let gv = fv * (1.0 - fv);
    let go = fo * (1.0 - fo);
    (fv * fo, [fo * gv, -s.v_lat * fo * gv, fv * go, -s.dy0_lat * fv * go])
}

fn loss(theta: &[f64; 4], samples: &[CalibrationSample]) -> f64 {
    samples.iter().map(|s| (model(theta, s).0 - s.label).powi(2)).sum()
}

/// Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn validate_samples(samples: &[CalibrationSample]) -> Result<(), CalibrationError> {
    if samples.len() < MIN_SAMPLES {
        return Err(CalibrationError::TooFewSamples(samples.len()));
    }
    for (index, s) in samples.iter().enumerate() {
        if !(s.v_lat.is_finite() && s.dy0_lat.is_finite()) {
            return Err(CalibrationError::BadSample { index, reason: "non-finite input".into() });
        }
        if !(0.0..=1.0).contains(&s.label) {
            return Err(CalibrationError::BadSample { index, reason: format!("label {} outside [0, 1]", s.label) });
        }
    }
    Ok(())
}

/// Least-squares fit of `min(P1·P2, 1)` to the labels by damped
/// Gauss-Newton, started from `(0.1, 5, 1, 5)`.
pub fn fit_sigmoid(samples: &[CalibrationSample]) -> Result<FitResult, CalibrationError> {
    fit_sigmoid_from(samples, &SigmoidParams { s_v: 0.1, m_v: 5.0, s_o: 1.0, m_o: 5.0 })
}

pub fn fit_sigmoid_from(samples: &[CalibrationSample], init: &SigmoidParams) -> Result<FitResult, CalibrationError> {
    validate_samples(samples)?;
    let first = samples[0].label;
    let degenerate = samples.iter().all(|s| s.label == first);

    let mut theta = [init.s_v.ln(), init.m_v, init.s_o.ln(), init.m_o];
    let mut current = loss(&theta, samples);
    let mut history = vec![current];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for s in samples {
            let (p, g) = model(&theta, s);
            let r = p - s.label;
            for i in 0..4 {
                jtr[i] += g[i] * r;
                for k in 0..4 {
                    jtj[i][k] += g[i] * g[k];
                }
            }
        }
        if jtr.iter().all(|g| g.abs() < 1e-300) {
            converged = true;
            break;
        }

        let mut accepted = None;
        while lambda <= LAMBDA_MAX {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12);
            }
            let step = solve4(a, jtr.map(|g| -g));
            if let Some(d) = step {
                let cand = [theta[0] + d[0], theta[1] + d[1], theta[2] + d[2], theta[3] + d[3]];
                let l = loss(&cand, samples);
                if l.is_finite() && l <= current {
                    accepted = Some((cand, l));
                    lambda = (lambda / 10.0).max(1e-15);
                    break;
                }
            }
            lambda *= 10.0;
        }
        let Some((cand, l)) = accepted else {
            // no damping level improves the loss: a stationary point
            converged = true;
            break;
        };
        let rel = (current - l) / current.max(f64::MIN_POSITIVE);
        theta = cand;
        current = l;
        history.push(l);
        if rel < REL_TOL || current == 0.0 {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        params: SigmoidParams { s_v: theta[0].exp(), m_v: theta[1], s_o: theta[2].exp(), m_o: theta[3] },
        loss: current,
        iterations,
        converged,
        degenerate,
        loss_history: history,
    })
}

/// Largest |P_a − P_b| over the node grids.
pub fn max_curve_deviation(a: &SigmoidParams, b: &SigmoidParams, v_node: &NodeSpec, d_node: &NodeSpec) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..v_node.state_count() {
        for j in 0..d_node.state_count() {
            let (v, d) = (v_node.value(i), d_node.value(j));
            worst = worst.max((le_probability(v, d, a) - le_probability(v, d, b)).abs());
        }
    }
    worst
}

pub fn samples_to_csv(samples: &[CalibrationSample]) -> String {
    let mut s = String::from("v_lat,dy0_lat,label\n");
    for x in samples {
        let _ = writeln!(s, "{},{},{}", x.v_lat, x.dy0_lat, x.label);
    }
    s
}

pub fn write_samples(samples: &[CalibrationSample], path: &Path) -> Result<(), CalibrationError> {
    fs::write(path, samples_to_csv(samples)).map_err(|source| CalibrationError::Io { path: path.into(), source })
}

/// Parses `v_lat,dy0_lat,label` rows; a header row and `#` comments are
/// skipped.
pub fn parse_samples(text: &str, path: &Path) -> Result<Vec<CalibrationSample>, CalibrationError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("v_lat") {
            continue;
        }
        let err = |reason: String| CalibrationError::Parse { path: path.into(), line: i + 1, reason };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(err(format!("expected 3 columns, found {}", cols.len())));
        }
        let mut vals = [0.0; 3];
        for (v, c) in vals.iter_mut().zip(&cols) {
            *v = c.parse().map_err(|_| err(format!("`{c}` is not a number")))?;
        }
        out.push(CalibrationSample { v_lat: vals[0], dy0_lat: vals[1], label: vals[2] });
    }
    Ok(out)
}

pub fn read_samples(path: &Path) -> Result<Vec<CalibrationSample>, CalibrationError> {
    let text = fs::read_to_string(path).map_err(|source| CalibrationError::Io { path: path.into(), source })?;
    parse_samples(&text, path)
}

/// Fitted constants as a partial network-spec document.
pub fn params_json(p: &SigmoidParams) -> String {
    serde_json::to_string_pretty(&serde_json::json!({ "sigmoid": p })).expect("params serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbn::DbnNodes;

    fn nodes() -> (NodeSpec, NodeSpec) {
        let n = DbnNodes::default();
        (n.v_lat, n.dy0_lat)
    }

    #[test]
    fn labels_follow_the_crossing() {
        let c = default_calibration_config(1.0);
        let s = generate_samples(&c, LabelRule::EdgeCrossing).unwrap();
        assert_eq!(s[0].label, 0.0);
        // near edge at 3.5 - 0.9 = 2.6 reaches the marking at 1.75 after 0.85 s
        let first = s.iter().position(|x| x.label == 1.0).unwrap();
        assert_eq!(first, 9);
        assert!(s[first].dy0_lat <= 0.0 && s[first - 1].dy0_lat > 0.0);
        // settled at 3.5 s
        assert_eq!(s[34].label, 1.0);
        assert!(s[35..].iter().all(|x| x.label == 0.0));
        let m = generate_samples(&c, LabelRule::LateralMotion).unwrap();
        assert_eq!(m[0].label, 1.0);
    }

    #[test]
    fn round_trip_recovers_constants() {
        let (v, d) = nodes();
        let truth = SigmoidParams::default();
        let fit = fit_sigmoid(&samples_from_params(&truth, &v, &d)).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(fit.converged);
        assert!(rel(fit.params.s_v, truth.s_v) < 1e-3, "{:?}", fit.params);
        assert!(rel(fit.params.m_v, truth.m_v) < 1e-3, "{:?}", fit.params);
        assert!(rel(fit.params.s_o, truth.s_o) < 1e-3, "{:?}", fit.params);
        assert!(rel(fit.params.m_o, truth.m_o) < 1e-3, "{:?}", fit.params);
        assert!(max_curve_deviation(&fit.params, &truth, &v, &d) < 0.05);
    }

    #[test]
    fn accepted_losses_never_increase() {
        let (v, d) = nodes();
        let fit = fit_sigmoid(&samples_from_params(&SigmoidParams::default(), &v, &d)).unwrap();
        assert!(fit.loss_history.windows(2).all(|w| w[1] <= w[0]));
        let sim: Vec<_> = [0.5, 1.0, 1.5, 2.0]
            .iter()
            .flat_map(|vy| generate_samples(&default_calibration_config(*vy), LabelRule::EdgeCrossing).unwrap())
            .collect();
        let fit = fit_sigmoid(&sim).unwrap();
        assert!(fit.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.params.s_v > 0.0 && fit.params.s_o > 0.0);
    }

    #[test]
    fn all_zero_labels_are_degenerate() {
        let s: Vec<_> = (0..40)
            .map(|i| CalibrationSample { v_lat: -1.0 + 0.05 * i as f64, dy0_lat: 0.5, label: 0.0 })
            .collect();
        let fit = fit_sigmoid(&s).unwrap();
        assert!(fit.degenerate);
        assert!(fit.loss < 1e-3);
        assert!(s.iter().all(|x| le_probability(x.v_lat, x.dy0_lat, &fit.params) < 0.05));
    }

    #[test]
    fn rejects_short_or_invalid_input() {
        let s = vec![CalibrationSample { v_lat: 0.0, dy0_lat: 0.0, label: 0.5 }; 19];
        assert!(matches!(fit_sigmoid(&s), Err(CalibrationError::TooFewSamples(19))));
        let mut s = vec![CalibrationSample { v_lat: 0.0, dy0_lat: 0.0, label: 0.5 }; 20];
        s[3].label = 1.5;
        assert!(matches!(fit_sigmoid(&s), Err(CalibrationError::BadSample { index: 3, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let s = generate_samples(&default_calibration_config(1.2), LabelRule::EdgeCrossing).unwrap();
        let back = parse_samples(&samples_to_csv(&s), Path::new("x.csv")).unwrap();
        assert_eq!(back, s);
        let err = parse_samples("v_lat,dy0_lat,label\n1,2\n", Path::new("x.csv")).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn json_is_a_partial_network_spec() {
        let spec: crate::dbn::NetworkSpec = serde_json::from_str(&params_json(&SigmoidParams::default())).unwrap();
        assert_eq!(spec.sigmoid, SigmoidParams::default());
    }
}
