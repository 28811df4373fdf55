//! Grid execution over scenario parameters and the metrics and exports built
//! on top of it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::models::{ModelId, ModelSuite};
use crate::sim::{run_scenario, ScenarioConfig, Trace};

/// Upper end of the TTC color scale, s.
pub const TTC_COLOR_MAX: f64 = 4.0;
/// Ego speeds up to this value belong to the low-speed band, km/h.
pub const LOW_SPEED_MAX_KMH: f64 = 60.0;
const HEATMAP_CELL_PX: usize = 8;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("no results match filter {0}")]
    EmptyFilter(String),
    #[error("result sets cover different scenarios: {0}")]
    MismatchedConfigs(String),
    #[error("grid for {0} is not rectangular in lateral speed x initial distance")]
    NotRectangular(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SweepError + '_ {
    move |source| SweepError::Io { path: path.to_path_buf(), source }
}

/// Scenario grid; speeds in km/h, lateral speeds in m/s, distances in m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub ego_speeds: Vec<f64>,
    pub cutin_speeds: Vec<f64>,
    pub lateral_speeds: Vec<f64>,
    pub initial_distances: Vec<f64>,
}

/// The reconstructed lateral-speed axis: 0.3 to 2.0 m/s in 0.1 steps.
pub fn default_lateral_speeds() -> Vec<f64> {
    (3..=20).map(|i| i as f64 / 10.0).collect()
}

/// The reconstructed distance axis: 5 to 93.5 m in 1.5 m steps.
pub fn default_distances() -> Vec<f64> {
    (0..60).map(|i| 5.0 + 1.5 * i as f64).collect()
}

fn tens(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).step_by(10).map(f64::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPreset {
    /// Both speed bands.
    Paper,
    PaperLow,
    PaperHigh,
    Fig5,
    Fig6,
    Fig7,
}

impl GridPreset {
    pub const ALL: [GridPreset; 6] = [
        GridPreset::Paper,
        GridPreset::PaperLow,
        GridPreset::PaperHigh,
        GridPreset::Fig5,
        GridPreset::Fig6,
        GridPreset::Fig7,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GridPreset::Paper => "paper",
            GridPreset::PaperLow => "paper-low",
            GridPreset::PaperHigh => "paper-high",
            GridPreset::Fig5 => "fig5",
            GridPreset::Fig6 => "fig6",
            GridPreset::Fig7 => "fig7",
        }
    }

    pub fn grid(self) -> SweepGrid {
        match self {
            GridPreset::Paper => {
                let mut g = GridPreset::PaperHigh.grid();
                g.ego_speeds = [tens(10, 60), g.ego_speeds].concat();
                g
            }
            GridPreset::PaperLow => SweepGrid {
                ego_speeds: tens(10, 60),
                cutin_speeds: tens(10, 50),
                lateral_speeds: default_lateral_speeds(),
                initial_distances: default_distances(),
            },
            GridPreset::PaperHigh => SweepGrid {
                ego_speeds: vec![70.0, 90.0, 110.0, 130.0],
                cutin_speeds: tens(10, 120),
                lateral_speeds: default_lateral_speeds(),
                initial_distances: default_distances(),
            },
            GridPreset::Fig5 => {
                let c = fig5_config();
                SweepGrid {
                    ego_speeds: vec![70.0],
                    cutin_speeds: vec![10.0],
                    lateral_speeds: vec![c.vy.abs()],
                    initial_distances: vec![c.dx0],
                }
            }
            GridPreset::Fig6 => SweepGrid {
                ego_speeds: vec![70.0],
                cutin_speeds: vec![10.0],
                lateral_speeds: default_lateral_speeds(),
                initial_distances: default_distances(),
            },
            GridPreset::Fig7 => SweepGrid {
                ego_speeds: vec![90.0],
                cutin_speeds: vec![10.0],
                lateral_speeds: vec![1.7],
                initial_distances: vec![41.0],
            },
        }
    }
}

impl FromStr for GridPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GridPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown grid preset `{s}` (valid: paper, paper-low, paper-high, fig5, fig6, fig7)"))
    }
}

/// Single braking-comparison scenario at 70 km/h against 10 km/h.
pub fn fig5_config() -> ScenarioConfig {
    ScenarioConfig::from_kmh(70.0, 10.0, 0.5, 110.0)
}

/// Single profile-comparison scenario at 90 km/h against 10 km/h.
pub fn fig7_config() -> ScenarioConfig {
    ScenarioConfig::from_kmh(90.0, 10.0, 1.7, 41.0)
}

/// One grid point, kept in the grid's own units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub ego_kmh: f64,
    pub cutin_kmh: f64,
    pub lateral_speed: f64,
    pub dx0: f64,
}

impl GridPoint {
    pub fn config(&self) -> ScenarioConfig {
        ScenarioConfig::from_kmh(self.ego_kmh, self.cutin_kmh, self.lateral_speed, self.dx0)
    }

    fn key(&self) -> [u64; 4] {
        [self.ego_kmh.to_bits(), self.cutin_kmh.to_bits(), self.lateral_speed.to_bits(), self.dx0.to_bits()]
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ego {} km/h, cut-in {} km/h, lateral {} m/s, dx0 {} m",
            self.ego_kmh, self.cutin_kmh, self.lateral_speed, self.dx0
        )
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), SweepError> {
        let axes = [
            ("ego_speeds", &self.ego_speeds),
            ("cutin_speeds", &self.cutin_speeds),
            ("lateral_speeds", &self.lateral_speeds),
            ("initial_distances", &self.initial_distances),
        ];
        for (name, axis) in axes {
            if axis.is_empty() {
                return Err(SweepError::InvalidGrid(format!("{name} is empty")));
            }
            if axis.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(SweepError::InvalidGrid(format!("{name} holds a negative or non-finite value")));
            }
        }
        if self.initial_distances.iter().any(|d| *d <= 0.0) {
            return Err(SweepError::InvalidGrid("initial distances must be > 0".into()));
        }
        Ok(())
    }

    /// Closing scenarios of the grid; pairs with the cut-in at or above the
    /// ego speed are skipped.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &ego_kmh in &self.ego_speeds {
            for &cutin_kmh in self.cutin_speeds.iter().filter(|c| **c < ego_kmh) {
                for &lateral_speed in &self.lateral_speeds {
                    for &dx0 in &self.initial_distances {
                        out.push(GridPoint { ego_kmh, cutin_kmh, lateral_speed, dx0 });
                    }
                }
            }
        }
        out
    }

    /// Short content hash recorded in output headers.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("grid serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub point: GridPoint,
    pub config: ScenarioConfig,
    pub model_id: ModelId,
    pub crash: bool,
    pub min_ttc: Option<f64>,
    pub detection_time: Option<f64>,
    pub first_brake_time: Option<f64>,
    pub max_jerk: f64,
    pub max_decel: f64,
}

impl SweepResult {
    pub fn from_trace(point: GridPoint, model_id: ModelId, trace: &Trace) -> Self {
        Self {
            point,
            config: trace.config,
            model_id,
            crash: trace.crash,
            min_ttc: trace.min_ttc,
            detection_time: trace.detection_time,
            first_brake_time: trace.first_brake_time(),
            max_jerk: trace.max_abs_jerk(),
            max_decel: trace.max_decel(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDiagnostic {
    pub point: GridPoint,
    pub model_id: ModelId,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub results: Vec<SweepResult>,
    pub diagnostics: Vec<SweepDiagnostic>,
}

/// Runs every grid point against every model on a pool of `threads`
/// workers. Output order is grid order, then model order, independent of
/// scheduling.
pub fn run_sweep(
    grid: &SweepGrid,
    models: &[ModelId],
    suite: &ModelSuite,
    threads: usize,
) -> Result<SweepOutput, SweepError> {
    grid.validate()?;
    let jobs: Vec<(GridPoint, ModelId)> = grid
        .points()
        .into_iter()
        .flat_map(|p| models.iter().map(move |m| (p, *m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<SweepResult, SweepDiagnostic>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(point, model_id)| {
                let mut model = suite.build(model_id);
                run_scenario(&point.config(), model.as_mut(), &suite.params)
                    .map(|trace| SweepResult::from_trace(point, model_id, &trace))
                    .map_err(|e| SweepDiagnostic { point, model_id, message: e.to_string() })
            })
            .collect()
    });
    let mut out = SweepOutput::default();
    for o in outcomes {
        match o {
            Ok(r) => out.results.push(r),
            Err(d) => out.diagnostics.push(d),
        }
    }
    Ok(out)
}

/// Runs a single scenario for each model and keeps the full traces.
pub fn run_traces(
    config: &ScenarioConfig,
    models: &[ModelId],
    suite: &ModelSuite,
) -> Result<Vec<Trace>, crate::sim::SimError> {
    models
        .iter()
        .map(|&id| {
            let mut m = suite.build(id);
            run_scenario(config, m.as_mut(), &suite.params)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedBand {
    Low,
    High,
}

impl SpeedBand {
    pub fn of(ego_kmh: f64) -> Self {
        if ego_kmh <= LOW_SPEED_MAX_KMH {
            SpeedBand::Low
        } else {
            SpeedBand::High
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpeedBand::Low => "low",
            SpeedBand::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ResultFilter {
    pub model: Option<ModelId>,
    pub band: Option<SpeedBand>,
    pub ego_kmh: Option<f64>,
    pub cutin_kmh: Option<f64>,
}

impl ResultFilter {
    pub fn model(model: ModelId) -> Self {
        Self { model: Some(model), ..Self::default() }
    }

    pub fn band(mut self, band: SpeedBand) -> Self {
        self.band = Some(band);
        self
    }

    pub fn speeds(mut self, ego_kmh: f64, cutin_kmh: f64) -> Self {
        self.ego_kmh = Some(ego_kmh);
        self.cutin_kmh = Some(cutin_kmh);
        self
    }

    pub fn matches(&self, r: &SweepResult) -> bool {
        self.model.is_none_or(|m| m == r.model_id)
            && self.band.is_none_or(|b| b == SpeedBand::of(r.point.ego_kmh))
            && self.ego_kmh.is_none_or(|e| e == r.point.ego_kmh)
            && self.cutin_kmh.is_none_or(|c| c == r.point.cutin_kmh)
    }
}

impl fmt::Display for ResultFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(m) = self.model {
            parts.push(format!("model={m}"));
        }
        if let Some(b) = self.band {
            parts.push(format!("band={}", b.as_str()));
        }
        if let Some(e) = self.ego_kmh {
            parts.push(format!("ego={e}"));
        }
        if let Some(c) = self.cutin_kmh {
            parts.push(format!("cutin={c}"));
        }
        if parts.is_empty() {
            f.write_str("{all}")
        } else {
            write!(f, "{{{}}}", parts.join(", "))
        }
    }
}

/// Crash count and scenario count for the filtered results.
pub fn crash_counts(results: &[SweepResult], filter: &ResultFilter) -> (usize, usize) {
    results
        .iter()
        .filter(|r| filter.matches(r))
        .fold((0, 0), |(c, n), r| (c + r.crash as usize, n + 1))
}

/// 100 × crashes / scenarios over the filtered results.
pub fn crash_percentage(results: &[SweepResult], filter: &ResultFilter) -> Result<f64, SweepError> {
    let (crashes, n) = crash_counts(results, filter);
    if n == 0 {
        return Err(SweepError::EmptyFilter(filter.to_string()));
    }
    Ok(100.0 * crashes as f64 / n as f64)
}

/// Mean minimum TTC over crash-free scenarios that had a defined TTC.
pub fn average_min_ttc(results: &[SweepResult], filter: &ResultFilter) -> Option<f64> {
    let v: Vec<f64> = results
        .iter()
        .filter(|r| filter.matches(r) && !r.crash)
        .filter_map(|r| r.min_ttc)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetReport {
    pub is_subset: bool,
    /// Scenarios where A crashes and B does not.
    pub counterexamples: Vec<GridPoint>,
    pub crashes_a: usize,
    pub crashes_b: usize,
}

/// Checks that every scenario where A crashes is also a crash for B.
pub fn crash_subset_check(results_a: &[SweepResult], results_b: &[SweepResult]) -> Result<SubsetReport, SweepError> {
    let b: HashMap<[u64; 4], bool> = results_b.iter().map(|r| (r.point.key(), r.crash)).collect();
    let keys_a: BTreeSet<[u64; 4]> = results_a.iter().map(|r| r.point.key()).collect();
    let keys_b: BTreeSet<[u64; 4]> = b.keys().copied().collect();
    if keys_a != keys_b || keys_a.len() != results_a.len() || keys_b.len() != results_b.len() {
        return Err(SweepError::MismatchedConfigs(format!(
            "{} scenarios vs {} scenarios ({} shared)",
            results_a.len(),
            results_b.len(),
            keys_a.intersection(&keys_b).count()
        )));
    }
    let counterexamples: Vec<GridPoint> = results_a
        .iter()
        .filter(|r| r.crash && !b[&r.point.key()])
        .map(|r| r.point)
        .collect();
    Ok(SubsetReport {
        is_subset: counterexamples.is_empty(),
        counterexamples,
        crashes_a: results_a.iter().filter(|r| r.crash).count(),
        crashes_b: results_b.iter().filter(|r| r.crash).count(),
    })
}

/// How much earlier the candidate detected than the baseline, s.
pub fn detection_advantage(trace_candidate: &Trace, trace_baseline: &Trace) -> Option<f64> {
    Some(trace_baseline.detection_time? - trace_candidate.detection_time?)
}

/// Per-scenario detection advantages of `candidate` over `baseline` where
/// both detect, in grid order.
pub fn detection_advantages(results: &[SweepResult], candidate: ModelId, baseline: ModelId) -> Vec<(GridPoint, f64)> {
    let base: HashMap<[u64; 4], Option<f64>> = results
        .iter()
        .filter(|r| r.model_id == baseline)
        .map(|r| (r.point.key(), r.detection_time))
        .collect();
    results
        .iter()
        .filter(|r| r.model_id == candidate)
        .filter_map(|r| {
            let b = (*base.get(&r.point.key())?)?;
            Some((r.point, b - r.detection_time?))
        })
        .collect()
}

/// Provenance written at the top of every output file.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHeader {
    pub grid_hash: String,
    pub params: String,
    pub version: String,
}

impl OutputHeader {
    pub fn new(grid: &SweepGrid, suite: &ModelSuite) -> Self {
        Self {
            grid_hash: grid.hash(),
            params: serde_json::to_string(suite).expect("suite serializes"),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn lines(&self) -> String {
        format!(
            "# cutin-bench {}\n# grid_hash={}\n# params={}\n",
            self.version, self.grid_hash, self.params
        )
    }
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), SweepError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, body).map_err(io_err(path))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

fn models_in(results: &[SweepResult]) -> Vec<ModelId> {
    results.iter().map(|r| r.model_id).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Crash percentage per model and speed band.
pub fn write_summary(results: &[SweepResult], header: &OutputHeader, path: &Path) -> Result<(), SweepError> {
    let mut s = header.lines();
    s.push_str("model,band,scenarios,crashes,crash_pct,avg_min_ttc\n");
    for model in models_in(results) {
        for band in [SpeedBand::Low, SpeedBand::High] {
            let f = ResultFilter::model(model).band(band);
            let (crashes, n) = crash_counts(results, &f);
            if n == 0 {
                continue;
            }
            let _ = writeln!(
                s,
                "{model},{},{n},{crashes},{:.2},{}",
                band.as_str(),
                100.0 * crashes as f64 / n as f64,
                fmt_opt(average_min_ttc(results, &f))
            );
        }
    }
    write_file(path, s.as_bytes())
}

/// Crash percentage per model and speed pair.
pub fn write_per_speed(results: &[SweepResult], header: &OutputHeader, path: &Path) -> Result<(), SweepError> {
    let mut pairs: BTreeMap<(u64, u64), (f64, f64)> = BTreeMap::new();
    for r in results {
        pairs.insert(
            (r.point.ego_kmh.to_bits(), r.point.cutin_kmh.to_bits()),
            (r.point.ego_kmh, r.point.cutin_kmh),
        );
    }
    let mut pairs: Vec<(f64, f64)> = pairs.into_values().collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut s = header.lines();
    s.push_str("model,ego_kmh,cutin_kmh,scenarios,crashes,crash_pct,avg_min_ttc\n");
    for model in models_in(results) {
        for &(e, c) in &pairs {
            let f = ResultFilter::model(model).speeds(e, c);
            let (crashes, n) = crash_counts(results, &f);
            if n == 0 {
                continue;
            }
            let _ = writeln!(
                s,
                "{model},{e},{c},{n},{crashes},{:.2},{}",
                100.0 * crashes as f64 / n as f64,
                fmt_opt(average_min_ttc(results, &f))
            );
        }
    }
    write_file(path, s.as_bytes())
}

/// RGB for a TTC value on a red (0 s) to yellow to green (4 s) scale.
pub fn ttc_color(ttc: Option<f64>) -> [u8; 3] {
    let t = ttc.map_or(1.0, |v| (v.clamp(0.0, TTC_COLOR_MAX)) / TTC_COLOR_MAX);
    if t < 0.5 {
        [255, (510.0 * t).round() as u8, 0]
    } else {
        [(510.0 * (1.0 - t)).round() as u8, 255, 0]
    }
}

pub fn heatmap_name(model: ModelId, ego_kmh: f64, cutin_kmh: f64) -> String {
    format!("heatmap_{model}_{ego_kmh}_{cutin_kmh}")
}

/// Writes the min-TTC matrix (rows: lateral speed, columns: initial
/// distance) as CSV at `csv_path` and a PPM rendering next to it.
///
/// Crash cells are `X` in the CSV and black in the image; TTC values are
/// kept raw in the CSV and clamped to the color scale in the image.
pub fn export_heatmap(
    results: &[SweepResult],
    model: ModelId,
    ego_kmh: f64,
    cutin_kmh: f64,
    header: &OutputHeader,
    csv_path: &Path,
) -> Result<PathBuf, SweepError> {
    let label = format!("{model} at {ego_kmh}/{cutin_kmh} km/h");
    let cells: Vec<&SweepResult> = results
        .iter()
        .filter(|r| r.model_id == model && r.point.ego_kmh == ego_kmh && r.point.cutin_kmh == cutin_kmh)
        .collect();
    let mut lat: Vec<f64> = cells.iter().map(|r| r.point.lateral_speed).collect();
    let mut dist: Vec<f64> = cells.iter().map(|r| r.point.dx0).collect();
    for axis in [&mut lat, &mut dist] {
        axis.sort_by(f64::total_cmp);
        axis.dedup();
    }
    if cells.is_empty() || cells.len() != lat.len() * dist.len() {
        return Err(SweepError::NotRectangular(label));
    }
    let index: HashMap<(u64, u64), &SweepResult> = cells
        .iter()
        .map(|r| ((r.point.lateral_speed.to_bits(), r.point.dx0.to_bits()), *r))
        .collect();
    if index.len() != cells.len() {
        return Err(SweepError::NotRectangular(label));
    }

    let mut csv = header.lines();
    let _ = writeln!(csv, "# model={model} ego_kmh={ego_kmh} cutin_kmh={cutin_kmh}");
    csv.push_str("lateral_speed");
    for d in &dist {
        let _ = write!(csv, ",{d}");
    }
    csv.push('\n');

    let (w, h) = (dist.len() * HEATMAP_CELL_PX, lat.len() * HEATMAP_CELL_PX);
    let mut pixels = vec![0u8; w * h * 3];
    for (row, &vy) in lat.iter().enumerate() {
        let _ = write!(csv, "{vy}");
        for (col, &d) in dist.iter().enumerate() {
            let r = index
                .get(&(vy.to_bits(), d.to_bits()))
                .ok_or_else(|| SweepError::NotRectangular(label.clone()))?;
            let color = if r.crash {
                csv.push_str(",X");
                [0, 0, 0]
            } else {
                let _ = write!(csv, ",{}", r.min_ttc.map(|v| format!("{v:.2}")).unwrap_or_else(|| "NA".into()));
                ttc_color(r.min_ttc)
            };
            for y in row * HEATMAP_CELL_PX..(row + 1) * HEATMAP_CELL_PX {
                for x in col * HEATMAP_CELL_PX..(col + 1) * HEATMAP_CELL_PX {
                    let i = (y * w + x) * 3;
                    pixels[i..i + 3].copy_from_slice(&color);
                }
            }
        }
        csv.push('\n');
    }
    write_file(csv_path, csv.as_bytes())?;

    let mut ppm = b"P6\n".to_vec();
    for line in header.lines().lines() {
        ppm.extend_from_slice(line.as_bytes());
        ppm.push(b'\n');
    }
    ppm.extend_from_slice(format!("{w} {h}\n255\n").as_bytes());
    ppm.extend_from_slice(&pixels);
    let ppm_path = csv_path.with_extension("ppm");
    write_file(&ppm_path, &ppm)?;
    Ok(ppm_path)
}

/// Per-tick speed, acceleration and jerk for each trace, followed by
/// summary rows with the peak jerk magnitude and peak deceleration.
pub fn profile_report(traces: &[Trace], header: &str, path: &Path) -> Result<(), SweepError> {
    let mut s = header.to_string();
    s.push_str("t");
    for t in traces {
        let id = &t.model_id;
        let _ = write!(s, ",{id}_v,{id}_a,{id}_jerk");
    }
    s.push('\n');
    let jerks: Vec<Vec<f64>> = traces.iter().map(Trace::jerk).collect();
    let rows = traces.iter().map(|t| t.ticks.len()).max().unwrap_or(0);
    let dt = traces.first().map_or(0.1, Trace::dt);
    for k in 0..rows {
        let _ = write!(s, "{:.2}", k as f64 * dt);
        for (t, j) in traces.iter().zip(&jerks) {
            match t.ticks.get(k) {
                Some(tick) => {
                    let _ = write!(s, ",{:.4},{:.4},{:.4}", tick.ego.v_long, tick.ego.a_long, j[k]);
                }
                None => s.push_str(",,,"),
            }
        }
        s.push('\n');
    }
    s.push_str("max_abs_jerk");
    for t in traces {
        let _ = write!(s, ",,,{:.4}", t.max_abs_jerk());
    }
    s.push('\n');
    s.push_str("max_decel");
    for t in traces {
        let _ = write!(s, ",,{:.4},", t.max_decel());
    }
    s.push('\n');
    write_file(path, s.as_bytes())
}
