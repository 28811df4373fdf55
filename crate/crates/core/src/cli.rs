//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use thiserror::Error;

use crate::calibration::{self, default_calibration_config, LabelRule};
use crate::dbn::NetworkSpec;
use crate::models::{ModelId, ModelSuite, RssParams, SafetyParams};
use crate::sim::{ScenarioConfig, SimError, Trace};
use crate::sweep::{self, GridPreset, OutputHeader, ResultFilter, SweepGrid, SweepOutput, SweepResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cutin-bench", version, about = "Cut-in scenario safety-model benchmark")]
pub struct Cli {
    /// JSON config with `scenario`/`grid`, `models`, `params` and `dbn` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated model ids (cc, rss, reg157, dbn).
    #[arg(long, global = true, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, env = "CUTIN_BENCH_THREADS")]
    pub threads: Option<usize>,
    /// Named scenario grid; overrides the config's `grid` section.
    #[arg(long, global = true)]
    pub grid_preset: Option<String>,
    /// Reserved; every component is deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write a trace per model.
    Run,
    /// Run a grid and write summary, per-speed and heatmap files.
    Sweep {
        /// Skip the per speed pair heatmaps.
        #[arg(long)]
        no_heatmaps: bool,
    },
    /// Crash-subset and detection-time comparison of the first model against the others.
    Compare,
    /// Fit the lane-change sigmoid to labeled samples.
    Calibrate {
        /// CSV of `v_lat,dy0_lat,label`; generated from the simulator when absent.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = RuleArg::EdgeCrossing)]
        label_rule: RuleArg,
    },
    /// Braking and jerk profiles on the two single-scenario presets.
    Report,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    EdgeCrossing,
    LateralMotion,
}

impl From<RuleArg> for LabelRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::EdgeCrossing => LabelRule::EdgeCrossing,
            RuleArg::LateralMotion => LabelRule::LateralMotion,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(m) => CliError::Usage(format!("invalid scenario: {m}")),
            e @ SimError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<sweep::SweepError> for CliError {
    fn from(e: sweep::SweepError) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// `models` section: a list of ids, or a map from id to overrides.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ModelsSection {
    List(Vec<String>),
    Map(BTreeMap<String, serde_json::Value>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: Option<ScenarioConfig>,
    pub grid: Option<SweepGrid>,
    pub models: Option<ModelsSection>,
    pub params: Option<SafetyParams>,
    pub dbn: Option<NetworkSpec>,
    pub rss: Option<RssParams>,
}

/// Everything a command needs after config and flags are merged.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub scenario: Option<ScenarioConfig>,
    pub grid: Option<SweepGrid>,
    pub grid_name: Option<String>,
    pub suite: ModelSuite,
    pub models: Vec<ModelId>,
    pub threads: usize,
    pub out: PathBuf,
    pub seed: u64,
}

fn parse_models(ids: &[String]) -> Result<Vec<ModelId>, CliError> {
    ids.iter()
        .map(|s| s.trim().parse::<ModelId>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

pub fn load_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed config {}: {e}", path.display())))
}

pub fn build_manifest(cli: &Cli) -> Result<RunManifest, CliError> {
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => ConfigFile::default(),
    };
    let mut suite = ModelSuite {
        params: file.params.unwrap_or_default(),
        rss: file.rss.unwrap_or_default(),
        dbn: file.dbn.unwrap_or_default(),
    };

    let mut models = match &file.models {
        None => ModelId::ALL.to_vec(),
        Some(ModelsSection::List(ids)) => parse_models(ids)?,
        Some(ModelsSection::Map(map)) => {
            let mut ids = Vec::new();
            for (key, overrides) in map {
                let id: ModelId = key.parse().map_err(|e: crate::models::UnknownModel| CliError::Usage(e.to_string()))?;
                let bad = |e: serde_json::Error| CliError::Usage(format!("models.{key}: {e}"));
                match (id, overrides) {
                    (_, serde_json::Value::Null) => {}
                    (ModelId::Dbn, v) => suite.dbn = merge(&suite.dbn, v).map_err(bad)?,
                    (ModelId::Rss, v) => suite.rss = merge(&suite.rss, v).map_err(bad)?,
                    (_, v) => suite.params = merge(&suite.params, v).map_err(bad)?,
                }
                ids.push(id);
            }
            ids
        }
    };
    if let Some(ids) = &cli.models {
        models = parse_models(ids)?;
    }

    suite.params.validate().map_err(|e| CliError::Usage(format!("params: {e}")))?;
    suite.dbn.validate().map_err(|e| CliError::Usage(format!("dbn: {e}")))?;

    let (grid, grid_name) = match &cli.grid_preset {
        Some(name) => {
            let p: GridPreset = name.parse().map_err(CliError::Usage)?;
            (Some(p.grid()), Some(p.name().to_string()))
        }
        None => (file.grid.clone(), file.grid.as_ref().map(|_| "config".to_string())),
    };
    if let Some(s) = &file.scenario {
        s.validate()?;
    }
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    Ok(RunManifest {
        scenario: file.scenario,
        grid,
        grid_name,
        suite,
        models,
        threads,
        out: cli.out.clone(),
        seed: cli.seed,
    })
}

/// Overlays a JSON object on the serialized form of `base`.
fn merge<T: serde::Serialize + serde::de::DeserializeOwned>(base: &T, patch: &serde_json::Value) -> serde_json::Result<T> {
    let mut v = serde_json::to_value(base)?;
    if let (Some(obj), Some(p)) = (v.as_object_mut(), patch.as_object()) {
        for (k, x) in p {
            obj.insert(k.clone(), x.clone());
        }
        serde_json::from_value(v)
    } else {
        serde_json::from_value(patch.clone())
    }
}

fn write_out(path: &Path, body: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, body).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn require_models(m: &RunManifest) -> Result<(), CliError> {
    if m.models.is_empty() {
        return Err(CliError::Usage("no models selected".into()));
    }
    Ok(())
}

fn dedup(models: &[ModelId]) -> Vec<ModelId> {
    let mut out = Vec::new();
    for m in models {
        if !out.contains(m) {
            out.push(*m);
        }
    }
    out
}

fn single_scenario(m: &RunManifest) -> Result<ScenarioConfig, CliError> {
    if let Some(s) = m.scenario {
        return Ok(s);
    }
    if let Some(g) = &m.grid {
        let pts = g.points();
        if pts.len() == 1 {
            return Ok(pts[0].config());
        }
        return Err(CliError::Usage(format!("`run` needs a single scenario; the grid has {} points", pts.len())));
    }
    Ok(sweep::fig5_config())
}

pub fn cmd_run(m: &RunManifest) -> Result<(), CliError> {
    require_models(m)?;
    let config = single_scenario(m)?;
    config.validate()?;
    let models = dedup(&m.models);
    let traces = sweep::run_traces(&config, &models, &m.suite)?;
    for t in &traces {
        write_out(&m.out.join(format!("trace_{}_{}.csv", t.model_id, config.tag())), t.to_csv())?;
        println!(
            "{}: crash={} detection={} min_ttc={}",
            t.model_id,
            t.crash,
            fmt_time(t.detection_time),
            fmt_time(t.min_ttc)
        );
    }
    Ok(())
}

fn fmt_time(t: Option<f64>) -> String {
    t.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

fn sweep_grid(m: &RunManifest, default: GridPreset) -> SweepGrid {
    m.grid.clone().unwrap_or_else(|| default.grid())
}

fn run_grid(m: &RunManifest, grid: &SweepGrid, models: &[ModelId]) -> Result<SweepOutput, CliError> {
    let out = sweep::run_sweep(grid, models, &m.suite, m.threads)?;
    if let Some(d) = out.diagnostics.first() {
        return Err(CliError::Numeric(format!(
            "{} scenario(s) failed; first: {} [{}]: {}",
            out.diagnostics.len(),
            d.model_id,
            d.point,
            d.message
        )));
    }
    Ok(out)
}

fn results_csv(results: &[SweepResult], header: &OutputHeader) -> String {
    let mut s = header.lines();
    s.push_str("model,ego_kmh,cutin_kmh,lateral_speed,dx0,crash,min_ttc,detection_time,first_brake_time,max_jerk,max_decel\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{:.4},{:.4}",
            r.model_id,
            r.point.ego_kmh,
            r.point.cutin_kmh,
            r.point.lateral_speed,
            r.point.dx0,
            r.crash as u8,
            r.min_ttc.map(|v| format!("{v:.4}")).unwrap_or_default(),
            r.detection_time.map(|v| format!("{v:.2}")).unwrap_or_default(),
            r.first_brake_time.map(|v| format!("{v:.2}")).unwrap_or_default(),
            r.max_jerk,
            r.max_decel
        );
    }
    s
}

pub fn cmd_sweep(m: &RunManifest, heatmaps: bool) -> Result<(), CliError> {
    require_models(m)?;
    let grid = sweep_grid(m, GridPreset::Paper);
    let models = dedup(&m.models);
    let out = run_grid(m, &grid, &models)?;
    let header = OutputHeader::new(&grid, &m.suite);

    let summary = m.out.join("summary.csv");
    sweep::write_summary(&out.results, &header, &summary)?;
    println!("wrote {}", summary.display());
    let per_speed = m.out.join("per_speed.csv");
    sweep::write_per_speed(&out.results, &header, &per_speed)?;
    println!("wrote {}", per_speed.display());
    write_out(&m.out.join("results.csv"), results_csv(&out.results, &header))?;

    if heatmaps {
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for r in &out.results {
            let p = (r.point.ego_kmh, r.point.cutin_kmh);
            if !pairs.contains(&p) {
                pairs.push(p);
            }
        }
        for model in &models {
            for &(e, c) in &pairs {
                let csv = m.out.join(format!("{}.csv", sweep::heatmap_name(*model, e, c)));
                let ppm = sweep::export_heatmap(&out.results, *model, e, c, &header, &csv)?;
                println!("wrote {}", csv.display());
                println!("wrote {}", ppm.display());
            }
        }
    }
    for model in &models {
        let pct = sweep::crash_percentage(&out.results, &ResultFilter::model(*model))?;
        println!("{model}: {pct:.2}% crashes over {} scenarios", out.results.len() / models.len());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageStats {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

pub fn advantage_stats(values: &[f64]) -> Option<AdvantageStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    Some(AdvantageStats { count: n, min: v[0], mean: v.iter().sum::<f64>() / n as f64, median, max: v[n - 1] })
}

/// Markdown comparison of `candidate` against each baseline.
pub fn compare_markdown(results: &[SweepResult], candidate: ModelId, baselines: &[ModelId]) -> Result<String, CliError> {
    let of = |id: ModelId| -> Vec<SweepResult> { results.iter().filter(|r| r.model_id == id).cloned().collect() };
    let cand = of(candidate);
    let mut s = String::new();
    let _ = writeln!(s, "# {candidate} compared with {}\n", baselines.iter().map(|b| b.as_str()).collect::<Vec<_>>().join(", "));
    s.push_str("| baseline | crashes (candidate) | crashes (baseline) | subset | counterexamples | advantage n | min | mean | median | max |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for &b in baselines {
        let base = of(b);
        let report = sweep::crash_subset_check(&cand, &base)?;
        let adv: Vec<f64> = if b == candidate {
            cand.iter().filter(|r| r.detection_time.is_some()).map(|_| 0.0).collect()
        } else {
            sweep::detection_advantages(results, candidate, b).into_iter().map(|(_, a)| a).collect()
        };
        let stats = advantage_stats(&adv);
        let f = |x: Option<f64>| x.map_or_else(|| "-".into(), |v| format!("{v:.2}"));
        let _ = writeln!(
            s,
            "| {b} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            report.crashes_a,
            report.crashes_b,
            report.is_subset,
            report.counterexamples.len(),
            stats.as_ref().map_or(0, |x| x.count),
            f(stats.as_ref().map(|x| x.min)),
            f(stats.as_ref().map(|x| x.mean)),
            f(stats.as_ref().map(|x| x.median)),
            f(stats.as_ref().map(|x| x.max)),
        );
        for p in report.counterexamples.iter().take(10) {
            let _ = writeln!(s, "\n- {candidate} crashes but {b} does not: {p}");
        }
    }
    Ok(s)
}

pub fn cmd_compare(m: &RunManifest) -> Result<(), CliError> {
    if m.models.len() < 2 {
        return Err(CliError::Usage("compare needs at least two models, e.g. --models dbn,cc".into()));
    }
    let grid = sweep_grid(m, GridPreset::Fig6);
    let distinct = dedup(&m.models);
    let out = run_grid(m, &grid, &distinct)?;
    let md = compare_markdown(&out.results, m.models[0], &m.models[1..])?;
    print!("{md}");
    let header = OutputHeader::new(&grid, &m.suite);
    let body = header.lines().lines().map(|l| format!("<!-- {} -->\n", l.trim_start_matches("# "))).collect::<String>() + "\n" + &md;
    write_out(&m.out.join("compare.md"), body)
}

pub fn cmd_calibrate(m: &RunManifest, samples: Option<&Path>, rule: LabelRule) -> Result<(), CliError> {
    let data = match samples {
        Some(p) => calibration::read_samples(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => {
            let mut all = Vec::new();
            for vy in sweep::default_lateral_speeds() {
                let c = m.scenario.unwrap_or_else(|| default_calibration_config(vy));
                let c = ScenarioConfig { vy: -vy, ..c };
                all.extend(calibration::generate_samples(&c, rule).map_err(|e| CliError::Usage(e.to_string()))?);
            }
            write_out(&m.out.join("samples.csv"), calibration::samples_to_csv(&all))?;
            all
        }
    };
    let fit = calibration::fit_sigmoid(&data).map_err(|e| CliError::Usage(e.to_string()))?;
    let p = fit.params;
    if ![p.s_v, p.m_v, p.s_o, p.m_o, fit.loss].iter().all(|v| v.is_finite()) {
        return Err(CliError::Numeric(format!("fit diverged: {p:?}")));
    }
    write_out(&m.out.join("sigmoid.json"), calibration::params_json(&p))?;
    println!(
        "s_v={:.6} m_v={:.6} s_o={:.6} m_o={:.6} loss={:.6e} iterations={} converged={} degenerate={}",
        p.s_v, p.m_v, p.s_o, p.m_o, fit.loss, fit.iterations, fit.converged, fit.degenerate
    );
    if !fit.converged {
        println!("warning: iteration limit reached; best parameters so far were written");
    }
    Ok(())
}

fn profile_summary(tag: &str, traces: &[Trace]) -> String {
    let mut s = format!("## {tag}\n\n| model | crash | detection (s) | first decel (s) | max decel (m/s²) | max abs jerk (m/s³) |\n|---|---|---|---|---|---|\n");
    for t in traces {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.2} | {:.2} |",
            t.model_id,
            t.crash,
            fmt_time(t.detection_time),
            fmt_time(t.first_decel_time()),
            t.max_decel(),
            t.max_abs_jerk()
        );
    }
    s.push('\n');
    s
}

pub fn cmd_report(m: &RunManifest) -> Result<(), CliError> {
    require_models(m)?;
    let models = dedup(&m.models);
    let mut md = String::from("# Single-scenario report\n\n");
    for (tag, config) in [("fig5", sweep::fig5_config()), ("fig7", sweep::fig7_config())] {
        let traces = sweep::run_traces(&config, &models, &m.suite)?;
        let header = format!("# scenario={}\n", config.tag());
        let path = m.out.join(format!("profile_{tag}.csv"));
        sweep::profile_report(&traces, &header, &path)?;
        println!("wrote {}", path.display());
        md.push_str(&profile_summary(tag, &traces));
    }
    print!("{md}");
    write_out(&m.out.join("report.md"), md)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let m = build_manifest(cli)?;
    match &cli.command {
        Command::Run => cmd_run(&m),
        Command::Sweep { no_heatmaps } => cmd_sweep(&m, !no_heatmaps),
        Command::Compare => cmd_compare(&m),
        Command::Calibrate { samples, label_rule } => cmd_calibrate(&m, samples.as_deref(), (*label_rule).into()),
        Command::Report => cmd_report(&m),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
