//! Run configuration, initial-data presets, and deterministic artifacts:
//! a CSV time series, plain-text grid snapshots, and a JSON report.
//!
//! Output files in the run directory:
//!
//! * `config.json`: the effective configuration, defaults filled in.
//! * `timeseries.csv`: one row per state (`step = 0` is the initial state).
//! * `rho_NNNNNN.txt`, `phi_NNNNNN.txt`: snapshots every `snapshot_stride` steps
//!   and at the final step.
//! * `report.json`: status, dissipation ledger and per-step identity reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    discrete_identities, dissipation_ledger, elliptic_defect, state_observables, DissipationLedger, IdentityReport,
    LedgerOptions, LedgerRow, Observables,
};
use crate::energy::{default_entropic_eps, free_energy, Density, FlowMode, Potential, SchemeParams};
use crate::error::{Error, Result};
use crate::grid::{frame_integral, inner, make_grid, Grid2D, ScalarField};
use crate::scalar::Real;
use crate::scheme::{elliptic_potential, run_observed, State, BOUNDARY_LAYERS};
use crate::transport::wasserstein_entropic;

/// Frame mass an initial density may carry.
pub const INITIAL_FRAME_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub cells_per_axis: usize,
}

/// Initial density, normalized to unit mass after discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPreset {
    Gaussian { center: [f64; 2], sigma: f64 },
    TwoBumps { centers: [[f64; 2]; 2], sigmas: [f64; 2] },
    /// Gaussian profile in the radius around `radius`.
    Ring { radius: f64, width: f64 },
    UniformDisk { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiPolicy {
    #[default]
    Zero,
    /// Solves `(α - Δ)φ₀ = ρ₀`.
    Elliptic,
    /// Reads a snapshot file; relative paths resolve against the config file.
    FromFile { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
    /// Check the De Giorgi identity every this many steps; `0` disables it.
    #[serde(default)]
    pub de_giorgi_stride: usize,
}

fn default_stride() -> usize {
    10
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub params: SchemeParams<f64>,
    pub grid: GridConfig,
    pub horizon: f64,
    pub initial: InitialPreset,
    #[serde(default)]
    pub phi0: PhiPolicy,
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: FlowMode,
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid2D<f64>> {
        make_grid(self.grid.half_width, self.grid.cells_per_axis)
            .map_err(|e| Error::Config(format!("grid: {e}")))
    }

    /// Checks every field; errors name the offending one.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.params.mode != self.mode {
            return Err(Error::Config("params.mode disagrees with mode; set only the top-level mode".into()));
        }
        let l = self.grid.half_width;
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::Config(format!("grid.half_width must be positive, got {l}")));
        }
        if self.grid.cells_per_axis < 4 {
            return Err(Error::Config(format!("grid.cells_per_axis must be >= 4, got {}", self.grid.cells_per_axis)));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be finite and >= 0, got {}", self.horizon)));
        }
        if self.output.snapshot_stride == 0 {
            return Err(Error::Config("output.snapshot_stride must be >= 1".into()));
        }
        let inside = |name: &str, c: [f64; 2]| {
            if c.iter().all(|v| v.is_finite() && v.abs() < l) {
                Ok(())
            } else {
                Err(Error::Config(format!("initial.{name} {c:?} lies outside the box")))
            }
        };
        let scale = |name: &str, s: f64| {
            if s > 0.0 && s < l {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "initial.{name} must be positive and below half_width = {l} (mass would touch the boundary), got {s}"
                )))
            }
        };
        match &self.initial {
            InitialPreset::Gaussian { center, sigma } => {
                inside("center", *center)?;
                scale("sigma", *sigma)?;
            }
            InitialPreset::TwoBumps { centers, sigmas } => {
                for c in centers {
                    inside("centers", *c)?;
                }
                for s in sigmas {
                    scale("sigmas", *s)?;
                }
            }
            InitialPreset::Ring { radius, width } => {
                scale("radius", *radius)?;
                scale("width", *width)?;
            }
            InitialPreset::UniformDisk { radius } => scale("radius", *radius)?,
        }
        Ok(())
    }

    fn wants(&self, f: OutputFormat) -> bool {
        self.output.formats.contains(&f)
    }
}

/// Parses and validates a config document. `entropic_eps` defaults to the
/// grid/step coupling rule when absent.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let parse_err = |e: serde_json::Error| Error::Parse { line: e.line(), column: e.column(), message: e.to_string() };
    let mut config: RunConfig = serde_json::from_str(text).map_err(parse_err)?;
    let raw: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
    if raw.pointer("/params/mode").is_none() {
        config.params.mode = config.mode;
    }
    if raw.pointer("/params/entropic_eps").is_none() {
        let grid = config.grid()?;
        config.params.entropic_eps = default_entropic_eps(&grid, config.params.step);
    }
    config.validate()?;
    Ok(config)
}

/// Reads a config file. A relative `from_file` path is resolved against
/// the config file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let mut config = parse_config(&fs::read_to_string(path)?)?;
    if let PhiPolicy::FromFile { path: p } = &mut config.phi0 {
        if p.is_relative() {
            if let Some(dir) = path.parent() {
                *p = dir.join(&*p);
            }
        }
    }
    Ok(config)
}

fn preset_field(grid: Grid2D<f64>, preset: &InitialPreset) -> ScalarField<f64> {
    let gauss = |x: f64, y: f64, c: [f64; 2], s: f64| (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / (2.0 * s * s)).exp();
    match preset {
        InitialPreset::Gaussian { center, sigma } => ScalarField::from_fn(grid, |x, y| gauss(x, y, *center, *sigma)),
        InitialPreset::TwoBumps { centers, sigmas } => ScalarField::from_fn(grid, |x, y| {
            // Each bump carries half the mass.
            let w = |s: f64| 1.0 / (s * s);
            w(sigmas[0]) * gauss(x, y, centers[0], sigmas[0]) + w(sigmas[1]) * gauss(x, y, centers[1], sigmas[1])
        }),
        InitialPreset::Ring { radius, width } => ScalarField::from_fn(grid, |x, y| {
            let r = (x * x + y * y).sqrt();
            (-(r - radius).powi(2) / (2.0 * width * width)).exp()
        }),
        InitialPreset::UniformDisk { radius } => {
            ScalarField::from_fn(grid, |x, y| if x * x + y * y <= radius * radius { 1.0 } else { 0.0 })
        }
    }
}

/// Discretizes the preset, normalizes it and applies the φ₀ policy.
pub fn build_initial(config: &RunConfig) -> Result<State<f64>> {
    let grid = config.grid()?;
    let field = preset_field(grid, &config.initial);
    let rho = Density::normalized(field).map_err(|e| Error::Config(format!("initial: {e}")))?;
    let frame = frame_integral(rho.field(), BOUNDARY_LAYERS);
    if frame > INITIAL_FRAME_LIMIT {
        return Err(Error::Config(format!(
            "initial density puts mass {frame:e} in the boundary frame (limit {INITIAL_FRAME_LIMIT:e}); increase grid.half_width"
        )));
    }
    let phi = match &config.phi0 {
        PhiPolicy::Zero => Potential::zeros(grid),
        PhiPolicy::Elliptic => elliptic_potential(&rho, config.params.alpha)?,
        PhiPolicy::FromFile { path } => {
            let snap = read_snapshot::<f64>(path)?;
            if !snap.field.grid().same_as(&grid) {
                return Err(Error::Config(format!("phi0 file {} is on a different grid", path.display())));
            }
            Potential::new(snap.field)
        }
    };
    State::new(rho, phi, 0.0)
}

/// A grid dump with its time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub field: ScalarField<T>,
    pub time: T,
}

/// Header line followed by `n` rows of `n` values, row `i` holding the cells
/// with x-index `i`. Values round-trip exactly.
pub fn format_snapshot<T: Real>(field: &ScalarField<T>, time: T) -> String {
    let grid = field.grid();
    let mut out = String::new();
    let _ = writeln!(out, "# half_width={:?} n={} time={:?}", grid.half_width(), grid.n(), time);
    for row in field.values().rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_snapshot<T: Real>(text: &str) -> Result<Snapshot<T>> {
    let bad = |line: usize, message: String| Error::Parse { line, column: 1, message };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty snapshot".into()))?;
    let rest = header.strip_prefix("# ").ok_or_else(|| bad(1, "missing '# ' header".into()))?;
    let mut half_width = None;
    let mut n = None;
    let mut time = None;
    for part in rest.split_whitespace() {
        let (key, value) = part.split_once('=').ok_or_else(|| bad(1, format!("malformed header entry {part:?}")))?;
        match key {
            "half_width" => half_width = value.parse::<T>().ok(),
            "n" => n = value.parse::<usize>().ok(),
            "time" => time = value.parse::<T>().ok(),
            _ => return Err(bad(1, format!("unknown header key {key:?}"))),
        }
    }
    let (half_width, n, time) = match (half_width, n, time) {
        (Some(l), Some(n), Some(t)) => (l, n, t),
        _ => return Err(bad(1, "header needs half_width, n and time".into())),
    };
    let grid = make_grid(half_width, n)?;
    let mut values = Vec::with_capacity(n * n);
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        for tok in line.split_whitespace() {
            let v = tok.parse::<T>().map_err(|_| bad(k + 2, format!("not a number: {tok:?}")))?;
            values.push(v);
        }
    }
    if values.len() != n * n {
        return Err(bad(1, format!("expected {} values, found {}", n * n, values.len())));
    }
    Ok(Snapshot { field: ScalarField::from_vec(grid, values)?, time })
}

pub fn write_snapshot<T: Real>(path: impl AsRef<Path>, field: &ScalarField<T>, time: T) -> Result<()> {
    fs::write(path, format_snapshot(field, time))?;
    Ok(())
}

pub fn read_snapshot<T: Real>(path: impl AsRef<Path>) -> Result<Snapshot<T>> {
    parse_snapshot(&fs::read_to_string(path)?)
}

/// One line of the time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesRow {
    pub step: usize,
    pub t: f64,
    pub entropy_term: f64,
    pub interaction_term: f64,
    pub dirichlet_term: f64,
    pub mass_term: f64,
    pub energy: f64,
    pub wasserstein_sq: f64,
    /// `‖Δφ - αφ + ρ‖²`.
    pub elliptic_residual_sq: f64,
    pub mass: f64,
    pub moment2: f64,
    pub fisher: f64,
    pub max_density: f64,
}

fn series_row(step: usize, state: &State<f64>, params: &SchemeParams<f64>, wasserstein_sq: f64) -> Result<SeriesRow> {
    let e = free_energy(&state.rho, &state.phi, params)?;
    let obs = state_observables(state);
    let defect = elliptic_defect(state, params);
    Ok(SeriesRow {
        step,
        t: state.time,
        entropy_term: e.entropy_term,
        interaction_term: e.interaction_term,
        dirichlet_term: e.dirichlet_term,
        mass_term: e.mass_term,
        energy: e.total,
        wasserstein_sq,
        elliptic_residual_sq: inner(&defect, &defect),
        mass: obs.mass,
        moment2: obs.moment2,
        fisher: obs.fisher,
        max_density: obs.max_density,
    })
}

/// Outcome of [`run_and_export`], also written into `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ExitReport {
    pub ok: bool,
    pub error: Option<String>,
    pub steps: usize,
    pub final_time: f64,
    pub final_observables: Observables<f64>,
    pub ledger: DissipationLedger<f64>,
    pub identities: Vec<IdentityReport<f64>>,
    pub snapshots: Vec<String>,
}

fn snapshot_names(step: usize) -> (String, String) {
    (format!("rho_{step:06}.txt"), format!("phi_{step:06}.txt"))
}

fn write_state(dir: &Path, step: usize, state: &State<f64>, names: &mut Vec<String>) -> Result<()> {
    let (r, p) = snapshot_names(step);
    write_snapshot(dir.join(&r), state.rho.field(), state.time)?;
    write_snapshot(dir.join(&p), state.phi.field(), state.time)?;
    names.push(r);
    names.push(p);
    Ok(())
}

/// Builds the initial state, runs the scheme and writes all artifacts.
/// Scheme failures are reported in the returned value with the partial
/// outputs already flushed; only setup and I/O failures are errors.
pub fn run_and_export(config: &RunConfig) -> Result<ExitReport> {
    config.validate()?;
    let dir = &config.output.directory;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(config).map_err(json_err)? + "\n")?;
    let params = config.params;
    let initial = build_initial(config)?;

    let mut rows = vec![series_row(0, &initial, &params, 0.0)?];
    let mut identities = Vec::new();
    let mut snapshots = Vec::new();
    let mut io_error = None;
    write_state(dir, 0, &initial, &mut snapshots)?;
    let stride = config.output.snapshot_stride;
    let mut step = 0;
    let result = run_observed(initial, &params, config.horizon, |prev, out| {
        step += 1;
        let record = (|| -> Result<()> {
            rows.push(series_row(step, &out.state, &params, out.diagnostics.wasserstein_sq)?);
            identities.push(discrete_identities(&out.state, prev, &params, Some(&out.transport))?);
            if step % stride == 0 {
                write_state(dir, step, &out.state, &mut snapshots)?;
            }
            Ok(())
        })();
        if let Err(e) = record {
            io_error.get_or_insert(e);
        }
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    let (traj, error) = match result {
        Ok(t) => (t, None),
        Err(f) => (*f.partial, Some(f.source.to_string())),
    };
    let last = traj.steps();
    if last % stride != 0 {
        write_state(dir, last, traj.last(), &mut snapshots)?;
    }
    let options = LedgerOptions { de_giorgi_stride: config.output.de_giorgi_stride, interpolant_gap: false };
    let ledger = dissipation_ledger(&traj, options);
    let report = ExitReport {
        ok: error.is_none(),
        error,
        steps: last,
        final_time: traj.last().time,
        final_observables: state_observables(traj.last()),
        ledger,
        identities,
        snapshots,
    };
    if config.wants(OutputFormat::Csv) {
        write_series(&dir.join("timeseries.csv"), &rows)?;
    }
    if config.wants(OutputFormat::Json) {
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report).map_err(json_err)? + "\n")?;
    }
    Ok(report)
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn write_series(path: &Path, rows: &[SeriesRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Ledger recomputed from the snapshots of a finished run.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseReport {
    pub times: Vec<f64>,
    pub observables: Vec<Observables<f64>>,
    /// One row per consecutive snapshot pair; penalties use the pair's time gap.
    pub rows: Vec<LedgerRow<f64>>,
    pub telescoped_ok: bool,
    pub energy_inequality_gap: f64,
}

/// Reloads `config.json` and every snapshot pair in `dir` and rebuilds the
/// dissipation ledger at snapshot resolution.
pub fn diagnose_directory(dir: impl AsRef<Path>) -> Result<DiagnoseReport> {
    let dir = dir.as_ref();
    let config = parse_config(&fs::read_to_string(dir.join("config.json"))?)?;
    let params = config.params;
    let mut steps: Vec<usize> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("rho_")?.strip_suffix(".txt")?.parse().ok()
        })
        .collect();
    steps.sort_unstable();
    if steps.is_empty() {
        return Err(Error::invalid(format!("no snapshots in {}", dir.display())));
    }
    let mut states = Vec::with_capacity(steps.len());
    for &s in &steps {
        let (r, p) = snapshot_names(s);
        let rho = read_snapshot::<f64>(dir.join(r))?;
        let phi = read_snapshot::<f64>(dir.join(p))?;
        states.push(State::new(Density::normalized(rho.field)?, Potential::new(phi.field), rho.time)?);
    }
    let mut rows = Vec::new();
    let mut cumulative = 0.0;
    for (k, pair) in states.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let gap = b.time - a.time;
        let w = wasserstein_entropic(&b.rho, &a.rho, &params)?.cost;
        let d = b.phi.field().zip_map(a.phi.field(), |x, y| x - y);
        let wasserstein_penalty = w / (2.0 * gap * params.chi);
        let l2_penalty = params.tau * inner(&d, &d) / (2.0 * gap);
        cumulative += wasserstein_penalty + l2_penalty;
        rows.push(LedgerRow {
            step: k + 1,
            energy_before: free_energy(&a.rho, &a.phi, &params)?.total,
            energy_after: free_energy(&b.rho, &b.phi, &params)?.total,
            wasserstein_penalty,
            l2_penalty,
            cumulative_dissipation: cumulative,
        });
    }
    let e0 = free_energy(&states[0].rho, &states[0].phi, &params)?.total;
    let last = states.last().expect("nonempty");
    let e_final = free_energy(&last.rho, &last.phi, &params)?.total;
    let energy_inequality_gap = e0 - (cumulative + e_final);
    let slack = params.accept_slack() * steps.last().copied().unwrap_or(0) as f64;
    Ok(DiagnoseReport {
        times: states.iter().map(|s| s.time).collect(),
        observables: states.iter().map(state_observables).collect(),
        rows,
        telescoped_ok: energy_inequality_gap >= -slack,
        energy_inequality_gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OraclePair {
    pub exact: f64,
    /// Debiased Sinkhorn divergence.
    pub entropic: f64,
    /// `⟨C, γ⟩` of the entropic cross plan, without entropy or debiasing.
    pub entropic_primal: f64,
    pub relative_error: f64,
}

/// Exact-versus-entropic transport costs on seeded random density pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub seed: u64,
    pub half_width: f64,
    pub cells_per_axis: usize,
    pub eps: f64,
    pub pairs: Vec<OraclePair>,
    pub max_relative_error: f64,
}

/// Compares [`wasserstein_exact`](crate::transport::wasserstein_exact) with
/// the debiased entropic cost at `eps = 1e-3 (2L)²` on `pairs` random pairs
/// of squared bump sums.
pub fn oracle_compare(half_width: f64, cells_per_axis: usize, pairs: usize, seed: u64) -> Result<OracleComparison> {
    use rand::SeedableRng;
    let grid = make_grid(half_width, cells_per_axis)?;
    let eps = 1e-3 * grid.box_area();
    let params = SchemeParams { entropic_eps: eps, ..SchemeParams::default() };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let a = crate::energy::random::BumpSum::sample(&mut rng, half_width).to_density(grid)?;
        let b = crate::energy::random::BumpSum::sample(&mut rng, half_width).to_density(grid)?;
        let exact = crate::transport::wasserstein_exact(&a, &b)?.cost;
        let result = wasserstein_entropic(&a, &b, &params)?;
        let entropic = result.cost;
        let entropic_primal = crate::transport::entropic_plan_cost(&result)?;
        out.push(OraclePair { exact, entropic, entropic_primal, relative_error: (entropic - exact).abs() / exact });
    }
    let max_relative_error = out.iter().fold(0.0f64, |m, p| m.max(p.relative_error));
    Ok(OracleComparison { seed, half_width, cells_per_axis, eps, pairs: out, max_relative_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::slope;
    use crate::energy::second_moment;
    use crate::grid::{integrate, laplacian};

    fn config_text(dir: &Path, extra: &str) -> String {
        format!(
            r#"{{
  "grid": {{ "half_width": 8.0, "cells_per_axis": 32 }},
  "horizon": 0.0,
  "initial": {{ "preset": "gaussian", "center": [0.0, 0.0], "sigma": 1.0 }},
  "output": {{ "directory": {dir:?} }}{extra}
}}"#
        )
    }

    fn config_with(dir: &Path, extra: &str) -> RunConfig {
        parse_config(&config_text(dir, extra)).unwrap()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = config_with(Path::new("out"), "");
        let grid = c.grid().unwrap();
        assert_eq!(c.params.chi, 4.0 * std::f64::consts::PI);
        assert_eq!(c.params.tau, 1.0);
        assert_eq!(c.params.step, 1e-3);
        assert_eq!(c.params.entropic_eps, default_entropic_eps(&grid, 1e-3));
        assert_eq!(c.phi0, PhiPolicy::Zero);
        assert_eq!(c.output.snapshot_stride, 10);
        assert_eq!(c.output.formats, vec![OutputFormat::Csv, OutputFormat::Json]);
        assert_eq!(c.mode, FlowMode::Full);
    }

    #[test]
    fn explicit_eps_and_mode_are_kept() {
        let c = config_with(
            Path::new("out"),
            r#", "params": { "entropic_eps": 0.5, "step": 0.01 }, "mode": "diffusion_only""#,
        );
        assert_eq!(c.params.entropic_eps, 0.5);
        assert_eq!(c.params.mode, FlowMode::DiffusionOnly);
        let bad = parse_config(&config_text(Path::new("out"), r#", "params": { "mode": "diffusion_only" }"#));
        assert!(matches!(bad, Err(Error::Config(m)) if m.contains("mode")));
    }

    #[test]
    fn negative_chi_names_the_field() {
        let err = parse_config(&config_text(Path::new("out"), r#", "params": { "chi": -1.0 }"#)).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("chi")), "{err}");
    }

    #[test]
    fn oversized_sigma_is_rejected() {
        let text = config_text(Path::new("out"), "").replace("\"sigma\": 1.0", "\"sigma\": 9.0");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("sigma")), "{err}");
    }

    #[test]
    fn unknown_keys_report_position() {
        let text = config_text(Path::new("out"), r#", "params": { "sinkhorn_tolerance": 1e-9 }"#);
        match parse_config(&text).unwrap_err() {
            Error::Parse { line, column, message } => {
                assert_eq!(line, 5);
                assert!(column > 1);
                assert!(message.contains("sinkhorn_tolerance"));
            }
            e => panic!("{e}"),
        }
        assert!(matches!(parse_config("{ not json"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn other_validation_errors() {
        let dir = Path::new("out");
        let cases = [
            (config_text(dir, "").replace("\"horizon\": 0.0", "\"horizon\": -1.0"), "horizon"),
            (config_text(dir, "").replace("\"center\": [0.0, 0.0]", "\"center\": [9.0, 0.0]"), "center"),
            (config_text(dir, "").replace("\"cells_per_axis\": 32", "\"cells_per_axis\": 2"), "cells_per_axis"),
            (config_text(dir, "").replace(&format!("{dir:?} }}"), &format!("{dir:?}, \"snapshot_stride\": 0 }}")), "snapshot_stride"),
        ];
        for (text, field) in cases {
            let err = parse_config(&text).unwrap_err();
            assert!(err.to_string().contains(field), "{field}: {err}");
        }
    }

    #[test]
    fn gaussian_initial_state() {
        let mut c = config_with(Path::new("out"), "");
        c.grid.cells_per_axis = 128;
        let s = build_initial(&c).unwrap();
        assert!((integrate(s.rho.field()) - 1.0).abs() < 1e-9);
        assert!((second_moment(s.rho.field()) - 2.0).abs() < 0.04);
        assert_eq!(state_observables(&s).h1_phi, 0.0);
    }

    #[test]
    fn elliptic_policy_solves_the_source_problem() {
        let mut c = config_with(Path::new("out"), r#", "phi0": { "policy": "elliptic" }"#);
        c.initial = InitialPreset::UniformDisk { radius: 2.0 };
        let s = build_initial(&c).unwrap();
        let phi = s.phi.field();
        let lap = laplacian(phi);
        let r = phi.zip_map(&lap, |p, l| c.params.alpha * p - l).zip_map(s.rho.field(), |a, b| a - b);
        assert!(inner(&r, &r).sqrt() <= 1e-10 * inner(s.rho.field(), s.rho.field()).sqrt());
    }

    #[test]
    fn all_presets_build() {
        let mut c = config_with(Path::new("out"), "");
        c.grid.cells_per_axis = 64;
        for preset in [
            InitialPreset::TwoBumps { centers: [[-2.0, 0.0], [2.0, 0.0]], sigmas: [0.5, 1.0] },
            InitialPreset::Ring { radius: 3.0, width: 0.5 },
            InitialPreset::UniformDisk { radius: 3.0 },
        ] {
            c.initial = preset;
            let s = build_initial(&c).unwrap();
            assert!((s.rho.mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn boundary_mass_suggests_larger_box() {
        let mut c = config_with(Path::new("out"), "");
        c.grid.half_width = 4.0;
        c.initial = InitialPreset::Gaussian { center: [0.0, 0.0], sigma: 1.5 };
        let err = build_initial(&c).unwrap_err();
        assert!(err.to_string().contains("half_width"), "{err}");
    }

    #[test]
    fn snapshots_round_trip_exactly() {
        let g = make_grid(3.0f64, 8).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (x * 0.1).sin() / 3.0 + y.exp() * 1e-7);
        let snap = parse_snapshot::<f64>(&format_snapshot(&f, 0.1 + 0.2)).unwrap();
        assert_eq!(snap.field, f);
        assert_eq!(snap.time, 0.1 + 0.2);

        assert!(parse_snapshot::<f64>("").is_err());
        assert!(parse_snapshot::<f64>("half_width=1 n=4 time=0").is_err());
        assert!(parse_snapshot::<f64>("# half_width=1.0 n=2 time=0.0\n1 2\n3").is_err());
        assert!(matches!(
            parse_snapshot::<f64>("# half_width=1.0 n=2 time=0.0\n1 2\n3 x"),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn potential_from_file_resolves_relative_paths() {
        let tmp = tempfile::tempdir().unwrap();
        let g = make_grid(8.0, 32).unwrap();
        let phi = ScalarField::from_fn(g, |x, _| 0.01 * x);
        write_snapshot(tmp.path().join("phi0.txt"), &phi, 0.0).unwrap();
        let text = config_text(Path::new("out"), r#", "phi0": { "policy": "from_file", "path": "phi0.txt" }"#);
        let path = tmp.path().join("run.json");
        fs::write(&path, text).unwrap();
        let c = load_config(&path).unwrap();
        assert_eq!(build_initial(&c).unwrap().phi.field(), &phi);

        let other = make_grid(8.0, 16).unwrap();
        write_snapshot(tmp.path().join("phi0.txt"), &ScalarField::zeros(other), 0.0).unwrap();
        assert!(build_initial(&c).is_err());
    }

    #[test]
    fn zero_horizon_export() {
        let tmp = tempfile::tempdir().unwrap();
        let c = config_with(tmp.path(), "");
        let report = run_and_export(&c).unwrap();
        assert!(report.ok);
        assert_eq!(report.steps, 0);
        assert!(report.ledger.rows.is_empty());
        assert_eq!(report.snapshots, vec!["rho_000000.txt", "phi_000000.txt"]);
        for f in ["config.json", "timeseries.csv", "report.json", "rho_000000.txt"] {
            assert!(tmp.path().join(f).exists(), "{f}");
        }
        let diag = diagnose_directory(tmp.path()).unwrap();
        assert!(diag.rows.is_empty() && diag.telescoped_ok);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let c = config_with(tmp.path(), "");
        let c = RunConfig { horizon: 0.004, output: OutputConfig { snapshot_stride: 2, ..c.output }, ..c };
        let read_all = || {
            let mut names: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).collect();
            names.sort();
            names.into_iter().map(|p| (p.clone(), fs::read(p).unwrap())).collect::<Vec<_>>()
        };
        run_and_export(&c).unwrap();
        let first = read_all();
        run_and_export(&c).unwrap();
        assert_eq!(first, read_all());
        assert!(first.iter().any(|(p, _)| p.ends_with("rho_000004.txt")));

        let diag = diagnose_directory(tmp.path()).unwrap();
        assert_eq!(diag.rows.len(), 2);
        assert!(diag.telescoped_ok);
    }

    #[test]
    fn diffusion_export_spreads_at_rate_four() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = config_with(tmp.path(), r#", "mode": "diffusion_only", "params": { "step": 0.005 }"#);
        c.horizon = 0.05;
        c.grid.cells_per_axis = 64;
        c.output.formats = vec![OutputFormat::Csv];
        let report = run_and_export(&c).unwrap();
        assert!(report.ok && !report.ledger.rows.is_empty());
        assert!(!tmp.path().join("report.json").exists());
        let mut rd = csv::Reader::from_path(tmp.path().join("timeseries.csv")).unwrap();
        let headers = rd.headers().unwrap().clone();
        let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
        let (ti, mi) = (col("t"), col("moment2"));
        let (mut t, mut m) = (Vec::new(), Vec::new());
        for rec in rd.records() {
            let rec = rec.unwrap();
            t.push(rec[ti].parse::<f64>().unwrap());
            m.push(rec[mi].parse::<f64>().unwrap());
        }
        assert_eq!(t.len(), 11);
        let rate = slope(&t, &m);
        assert!((rate - 4.0).abs() < 0.2, "{rate}");
    }

    #[test]
    fn oracle_comparison_is_seeded() {
        let a = oracle_compare(8.0, 8, 2, 3).unwrap();
        assert_eq!(a, oracle_compare(8.0, 8, 2, 3).unwrap());
        assert_eq!(a.pairs.len(), 2);
        assert!(a.pairs.iter().all(|p| p.exact > 0.0 && p.entropic > 0.0));
    }
}
