//! Run configuration, the analysis pipeline behind `qslab report`, and report
//! files (a JSON index, per-section CSVs and a run manifest).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::density::{tail_sup_norm, DensityGrid, Side};
use crate::deriv::{self, DEFAULT_LK_SLACK};
use crate::error::{Error, Result};
use crate::moments::{self, MomentValue};
use crate::sim::{self, SampleSet, SimConfig};
use crate::solver::{self, Init, SolverConfig};
use crate::stats::{self, Ecdf};
use crate::tails;
use crate::toll::{self, GAMMA, VAR_Z};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub const DEFAULT_SEED: u64 = 271_828;
pub const SEED_ENV: &str = "QSLAB_SEED";
pub const INDEX_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Allowance for `|φ(0)|` exceeding one by rounding in the quadrature sum.
pub const PHI_ROUNDING: f64 = 1e-12;

const TAIL_CAVEAT: &str = "desk-scale fit: the windows are short, and the wide acceptance bands \
reflect the O(1) and O(x) terms of the envelopes rather than estimates of limiting constants; \
the left intercept is a surrogate, not a value for c3";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    pub n_max: usize,
    pub exact_cap: usize,
    pub enumerate_max: usize,
    pub variance_tol: f64,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        MomentsConfig {
            n_max: 2000,
            exact_cap: moments::DEFAULT_EXACT_CAP,
            enumerate_max: 8,
            variance_tol: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: u64,
    pub count: u64,
    pub leaf_size: usize,
    pub variance_tol: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n: 100_000,
            count: 1_000_000,
            leaf_size: sim::DEFAULT_LEAF_SIZE,
            variance_tol: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointChecks {
    pub ks_max: f64,
    pub mean_tol: f64,
    pub variance_tol: f64,
    /// Also solve from the uniform start and compare in L∞.
    pub init_independence: bool,
    /// L∞ tolerance as a multiple of the solver tolerance.
    pub linf_factor: f64,
}

impl Default for FixedPointChecks {
    fn default() -> Self {
        FixedPointChecks {
            ks_max: 0.01,
            mean_tol: 1e-3,
            variance_tol: 5e-3,
            init_independence: true,
            linf_factor: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailConfig {
    pub left_window: (f64, f64),
    pub right_window: (f64, f64),
    pub left_slope_band: (f64, f64),
    pub ratio_x: f64,
    pub ratio_band: (f64, f64),
    pub band_c_max: f64,
    /// Grid size of the second solve used to bound the discretization error.
    pub richardson_n_points: usize,
    pub max_rel_error: f64,
    /// Norm orders `0..=proxy_orders` enter the limsup proxies.
    pub proxy_orders: usize,
    pub proxy_step: f64,
    pub proxy_band_max: f64,
}

impl Default for TailConfig {
    fn default() -> Self {
        TailConfig {
            left_window: (0.8, 2.2),
            right_window: (3.0, 10.0),
            left_slope_band: (1.2, 2.4),
            ratio_x: 10.0,
            ratio_band: (0.7, 1.8),
            band_c_max: 5.0,
            richardson_n_points: 2049,
            max_rel_error: 0.1,
            proxy_orders: 3,
            proxy_step: 0.05,
            proxy_band_max: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaConfig {
    pub eps: f64,
    pub left_k_max: usize,
    pub b: f64,
    pub delta: f64,
    pub right_k_max: usize,
    pub step_zs: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        LemmaConfig {
            eps: 0.05,
            left_k_max: 5,
            b: 0.5,
            delta: 0.02,
            right_k_max: 4,
            step_zs: vec![2.0, 2.5, 3.0],
            eps_grid: (1..100).map(|i| i as f64 * 1e-3).collect(),
            delta_grid: (1..=160).map(|i| i as f64 * 1e-3).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DerivConfig {
    pub lk_slack: f64,
    pub n_max: usize,
    pub xs: Vec<f64>,
    pub phi_points: usize,
    pub phi_p_max: u32,
    pub fk_max_order: usize,
}

impl Default for DerivConfig {
    fn default() -> Self {
        DerivConfig {
            lk_slack: DEFAULT_LK_SLACK,
            n_max: 6,
            xs: vec![0.0, 0.5, 1.0, 2.0],
            phi_points: 2001,
            phi_p_max: 3,
            fk_max_order: 6,
        }
    }
}

/// Everything a run needs; every key has a default, so an empty file is a
/// valid configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub moments: MomentsConfig,
    pub simulation: SimulationConfig,
    pub solver: SolverConfig,
    pub fixed_point: FixedPointChecks,
    pub tails: TailConfig,
    pub lemmas: LemmaConfig,
    pub derivatives: DerivConfig,
}

/// Keys accepted in a run configuration file, for `--help`.
pub const CONFIG_KEYS: &str = "\
Config keys (TOML; `default` selects the built-in values):
  seed
  [moments]     n_max, exact_cap, enumerate_max, variance_tol
  [simulation]  n, count, leaf_size, variance_tol
  [solver]      domain, n_points, u_panels, u_order, tol_l1, max_iter, init
  [fixed_point] ks_max, mean_tol, variance_tol, init_independence, linf_factor
  [tails]       left_window, right_window, left_slope_band, ratio_x, ratio_band,
                band_c_max, richardson_n_points, max_rel_error, proxy_orders,
                proxy_step, proxy_band_max
  [lemmas]      eps, left_k_max, b, delta, right_k_max, step_zs, eps_grid, delta_grid
  [derivatives] lk_slack, n_max, xs, phi_points, phi_p_max, fk_max_order
Seed precedence: --seed, then `seed`, then QSLAB_SEED, then the built-in default.";

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.moments.n_max == 0 {
            return Err(Error::Config("moments.n_max must be positive".into()));
        }
        if self.moments.enumerate_max > moments::MAX_ENUMERATION {
            return Err(Error::Config(format!(
                "moments.enumerate_max above {}",
                moments::MAX_ENUMERATION
            )));
        }
        if self.simulation.count < 2 {
            return Err(Error::Config("simulation.count must be at least 2".into()));
        }
        if self.tails.richardson_n_points < 16 {
            return Err(Error::Config("tails.richardson_n_points too small".into()));
        }
        if !(self.tails.proxy_step > 0.0) {
            return Err(Error::Config("tails.proxy_step must be positive".into()));
        }
        if self.derivatives.n_max < 2
            || self.derivatives.n_max > crate::density::MAX_DERIVATIVE_ORDER
        {
            return Err(Error::Config("derivatives.n_max must lie in 2..=6".into()));
        }
        Ok(())
    }

    /// Reads `path`, or the built-in defaults for the literal `default`.
    /// Returns the configuration with the bytes it was parsed from.
    pub fn load(path: &str) -> Result<(Self, String)> {
        if path == "default" {
            let cfg = RunConfig::default();
            let text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
            return Ok((cfg, text));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{path}: {e}")))?;
        Ok((Self::from_toml_str(&text)?, text))
    }

    /// Seed by precedence: explicit flag, config file, environment, default.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| {
                Error::Config(format!("{SEED_ENV}={v} is not an unsigned 64-bit integer"))
            }),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }
}

pub fn config_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => fmt_f64(*x),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

/// One CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(file: &str, header: &[&'static str]) -> Self {
        Table {
            file: file.to_string(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Cell::render).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Named acceptance check; any failing check makes the run exit with 1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, limit: impl Into<String>, pass: bool) -> Self {
        Check {
            name: name.to_string(),
            value,
            limit: limit.into(),
            pass,
        }
    }

    pub fn at_most(name: &str, value: f64, max: f64) -> Self {
        Check::new(name, value, format!("<= {}", fmt_f64(max)), value <= max)
    }

    pub fn within(name: &str, value: f64, band: (f64, f64)) -> Self {
        Check::new(
            name,
            value,
            format!("in [{}, {}]", fmt_f64(band.0), fmt_f64(band.1)),
            value >= band.0 && value <= band.1,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub summary: Value,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
}

impl Section {
    pub fn new(name: &str, summary: Value) -> Self {
        Section {
            name: name.to_string(),
            summary,
            tables: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// JSON formatter that writes floats with 17 significant digits.
struct Json17(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for Json17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with 17-digit floats and a trailing newline.
pub fn to_json17<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Json17(Default::default()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Writes every section's CSVs and the JSON index into `dir`; returns the
/// written paths with the index last. Nothing is written for an empty list.
pub fn emit_report(dir: &Path, sections: &[Section]) -> Result<Vec<PathBuf>> {
    if sections.is_empty() {
        return Err(Error::domain("no report sections to emit"));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut index_sections = Vec::new();
    let mut checks = Vec::new();
    for s in sections {
        let mut files = Vec::new();
        for t in &s.tables {
            let path = dir.join(&t.file);
            fs::write(&path, t.to_csv())?;
            files.push(t.file.clone());
            written.push(path);
        }
        index_sections.push(json!({
            "name": s.name,
            "summary": s.summary,
            "files": files,
            "pass": s.passed(),
        }));
        checks.extend(s.checks.iter().cloned());
    }
    let index = json!({
        "sections": index_sections,
        "checks": checks,
        "pass": checks.iter().all(|c| c.pass),
    });
    let path = dir.join(INDEX_FILE);
    fs::write(&path, to_json17(&index)?)?;
    written.push(path);
    Ok(written)
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub timings: Vec<(String, f64)>,
    pub version: String,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Collects artifacts and stage timings for one run directory.
#[derive(Debug)]
pub struct Run {
    pub dir: PathBuf,
    command: String,
    config_digest: String,
    seed: u64,
    started: f64,
    artifacts: Vec<PathBuf>,
    timings: Vec<(String, f64)>,
}

impl Run {
    pub fn new(dir: &Path, command: &str, config_text: &str, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Run {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config_digest: config_digest(config_text),
            seed,
            started: unix_now(),
            artifacts: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn add(&mut self, path: PathBuf) {
        self.artifacts.push(path);
    }

    pub fn extend(&mut self, paths: Vec<PathBuf>) {
        self.artifacts.extend(paths);
    }

    /// Runs `f`, recording its wall time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        log::info!("{stage}: {secs:.2} s");
        self.timings.push((stage.to_string(), secs));
        out
    }

    pub fn write_grid(&mut self, file: &str, grid: &DensityGrid) -> Result<()> {
        let path = self.path(file);
        grid.write_binary(io::BufWriter::new(fs::File::create(&path)?))?;
        self.add(path);
        Ok(())
    }

    pub fn write_samples(&mut self, file: &str, samples: &SampleSet) -> Result<()> {
        let path = self.path(file);
        samples.write_binary(io::BufWriter::new(fs::File::create(&path)?))?;
        self.add(path);
        Ok(())
    }

    pub fn write_text(&mut self, file: &str, text: &str) -> Result<()> {
        let path = self.path(file);
        fs::write(&path, text)?;
        self.add(path);
        Ok(())
    }

    pub fn emit(&mut self, sections: &[Section]) -> Result<()> {
        let paths = emit_report(&self.dir, sections)?;
        self.extend(paths);
        Ok(())
    }

    /// Writes the manifest (listing every artifact and itself) and returns it.
    pub fn finish(mut self) -> Result<RunManifest> {
        let manifest_path = self.path(MANIFEST_FILE);
        self.artifacts.push(manifest_path.clone());
        let mut artifacts: Vec<String> = self
            .artifacts
            .iter()
            .map(|p| {
                p.strip_prefix(&self.dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned()
            })
            .collect();
        artifacts.sort();
        artifacts.dedup();
        let manifest = RunManifest {
            command: self.command,
            config_digest: self.config_digest,
            seed: self.seed,
            artifacts,
            started_unix: self.started,
            finished_unix: unix_now(),
            timings: self.timings,
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        fs::write(&manifest_path, to_json17(&manifest)?)?;
        Ok(manifest)
    }
}

/// Reads a grid from the binary format, or from JSON for a `.json` path.
pub fn load_grid(path: &Path) -> Result<DensityGrid> {
    if path.extension().is_some_and(|e| e == "json") {
        DensityGrid::from_json(serde_json::from_str(&fs::read_to_string(path)?)?)
    } else {
        DensityGrid::read_binary(io::BufReader::new(fs::File::open(path)?))
    }
}

pub fn load_samples(path: &Path) -> Result<SampleSet> {
    SampleSet::read_binary(io::BufReader::new(fs::File::open(path)?))
}

fn moment_cell(v: &MomentValue) -> Cell {
    Cell::Text(v.to_string())
}

/// Exact moment table, the closed form for `E X_n`, exhaustive enumeration for
/// small `n` and the scaled variance at `n_max`.
/// Moment table with exact rows as `p/q`, the closed form for `E X_n`,
/// exhaustive enumeration for small `n` and, with `check_limit`, the scaled
/// variance at `n_max` against `7 - 2π²/3`.
pub fn moments_section(
    cfg: &MomentsConfig,
    check_limit: bool,
) -> Result<(Section, moments::MomentTable)> {
    let table = moments::moment_table(cfg.n_max, cfg.exact_cap)?;
    let closed = moments::closed_form_means(cfg.n_max.min(cfg.exact_cap));
    let mean_ok = closed
        .iter()
        .zip(&table.rows)
        .all(|(c, r)| r.mean.as_exact() == Some(c));
    let enum_top = cfg.enumerate_max.min(cfg.n_max);
    let mut enum_ok = true;
    for n in 0..=enum_top {
        let (m, v) = moments::enumerated_moments(n)?;
        let row = table.row(n as u64).expect("table covers n_max");
        enum_ok &= row.mean.as_exact() == Some(&m) && row.variance.as_exact() == Some(&v);
    }
    let top = table.row(cfg.n_max as u64).expect("table covers n_max");
    let nf = cfg.n_max as f64;
    let scaled = top.variance.to_f64() / (nf * nf);

    let mut exact = Table::new("moments.csv", &["n", "mean", "variance"]);
    let mut floats = Table::new(
        "moments_float.csv",
        &["n", "mean", "variance", "variance_over_n2"],
    );
    for r in &table.rows {
        exact.push(vec![
            Cell::Int(r.n as i64),
            moment_cell(&r.mean),
            moment_cell(&r.variance),
        ]);
        let n2 = (r.n as f64).powi(2);
        let ratio: Cell = if r.n == 0 {
            Cell::Empty
        } else {
            (r.variance.to_f64() / n2).into()
        };
        floats.push(vec![
            Cell::Int(r.n as i64),
            r.mean.to_f64().into(),
            r.variance.to_f64().into(),
            ratio,
        ]);
    }
    let mut s = Section::new(
        "moments",
        json!({
            "n_max": cfg.n_max,
            "exact_cap": cfg.exact_cap,
            "enumerate_max": enum_top,
            "variance_over_n2_at_n_max": scaled,
            "var_z": VAR_Z,
        }),
    );
    s.tables = vec![exact, floats];
    s.checks.push(Check::new(
        "moments.enumeration",
        enum_top as f64,
        "exact match",
        enum_ok,
    ));
    s.checks.push(Check::new(
        "moments.mean_closed_form",
        cfg.n_max.min(cfg.exact_cap) as f64,
        "exact match",
        mean_ok,
    ));
    if check_limit {
        s.checks.push(Check::at_most(
            "moments.scaled_variance_gap",
            (scaled - VAR_Z).abs(),
            cfg.variance_tol,
        ));
    }
    Ok((s, table))
}

pub fn simulation_section(cfg: &SimulationConfig, samples: &SampleSet, file: &str) -> Section {
    let mean = stats::mean(&samples.values);
    let var = stats::variance(&samples.values);
    let mut s = Section::new(
        "simulation",
        json!({
            "n": samples.n,
            "count": samples.count,
            "seed": samples.seed,
            "leaf_size": cfg.leaf_size,
            "mean": mean,
            "variance": var,
            "var_z": VAR_Z,
            "samples_file": file,
        }),
    );
    s.checks.push(Check::at_most(
        "simulation.variance_gap",
        (var - VAR_Z).abs(),
        cfg.variance_tol,
    ));
    s
}

pub fn simulate(cfg: &SimulationConfig, seed: u64) -> Result<SampleSet> {
    let sc = SimConfig {
        leaf_size: cfg.leaf_size,
        ..SimConfig::default()
    };
    sim::sample_zn_with(cfg.n, cfg.count, seed, &sc)
}

fn trace_table(file: &str, trace: &[f64]) -> Table {
    let mut t = Table::new(file, &["iteration", "l1_change"]);
    for (i, r) in trace.iter().enumerate() {
        t.push(vec![Cell::Int(i as i64 + 1), (*r).into()]);
    }
    t
}

/// Runs the solver; a convergence failure becomes a failing check with the
/// residual trace instead of an error.
pub fn solve_section(cfg: &SolverConfig, name: &str) -> Result<(Section, Option<DensityGrid>)> {
    let (grid, trace, converged) = match solver::solve(cfg) {
        Ok(sol) => (Some(sol.grid), sol.trace, true),
        Err(Error::Convergence { trace }) => (None, trace, false),
        Err(e) => return Err(e),
    };
    let mut summary = json!({
        "init": String::from(cfg.init.clone()),
        "n_points": cfg.n_points,
        "domain": [cfg.domain.0, cfg.domain.1],
        "u_panels": cfg.u_panels,
        "u_order": cfg.u_order,
        "tol_l1": cfg.tol_l1,
        "iterations": trace.len(),
        "final_l1_change": trace.last().copied(),
    });
    if trace.len() >= 3 {
        let n = trace.len();
        summary["contraction_ratio"] = json!(trace[n - 1] / trace[n - 2]);
    }
    if let Some(g) = &grid {
        summary["normalization_defect"] = json!(g.meta.normalization_defect);
        summary["mean"] = json!(g.mean());
        summary["variance"] = json!(g.variance());
    }
    let mut s = Section::new(name, summary);
    s.tables
        .push(trace_table(&format!("{name}_trace.csv"), &trace));
    s.checks.push(Check::new(
        &format!("{name}.converged"),
        trace.last().copied().unwrap_or(f64::NAN),
        format!(
            "<= {} within {} iterations",
            fmt_f64(cfg.tol_l1),
            cfg.max_iter
        ),
        converged,
    ));
    Ok((s, grid))
}

/// Moments of the grid and the KS distance to the Monte Carlo sample.
pub fn fixed_point_section(
    grid: &DensityGrid,
    samples: Option<&SampleSet>,
    cfg: &FixedPointChecks,
) -> Section {
    let mean = grid.mean();
    let var = grid.variance();
    let mut s = Section::new(
        "fixed_point",
        json!({ "mean": mean, "variance": var, "var_z": VAR_Z }),
    );
    s.checks
        .push(Check::at_most("fixed_point.mean", mean.abs(), cfg.mean_tol));
    s.checks.push(Check::at_most(
        "fixed_point.variance_gap",
        (var - VAR_Z).abs(),
        cfg.variance_tol,
    ));
    if let Some(samples) = samples {
        let ks = Ecdf::new(&samples.values).ks_against(|x| grid.cdf(x));
        s.summary["ks_distance"] = json!(ks);
        s.summary["ks_samples"] = json!(samples.count);
        s.checks
            .push(Check::at_most("fixed_point.ks", ks, cfg.ks_max));
    }
    s
}

pub fn linf_distance(a: &DensityGrid, b: &DensityGrid) -> Result<f64> {
    if !a.same_geometry(b) {
        return Err(Error::Shape("grids differ in geometry".into()));
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

pub fn lemma_section(grid: &DensityGrid, cfg: &LemmaConfig) -> Result<Section> {
    let mut reports = tails::verify_left_lemma(grid, cfg.eps, cfg.left_k_max)?;
    reports.extend(tails::verify_right_lemmas(
        grid,
        cfg.b,
        cfg.delta,
        cfg.right_k_max,
        &cfg.step_zs,
    )?);
    let elementary = toll::check_elementary_inequalities(&cfg.eps_grid, &cfg.delta_grid)?;

    let mut t = Table::new(
        "lemmas.csv",
        &["lemma", "parameters", "lhs", "rhs", "margin", "pass"],
    );
    for r in &reports {
        let params: Vec<String> = r
            .parameters
            .iter()
            .map(|(k, v)| format!("{k}={}", fmt_f64(*v)))
            .collect();
        t.push(vec![
            r.lemma_id.as_str().into(),
            params.join(";").into(),
            r.lhs.into(),
            r.rhs.into(),
            r.margin.into(),
            r.pass.into(),
        ]);
    }
    let mut e = Table::new(
        "elementary.csv",
        &["inequality", "param", "lhs", "rhs", "pass"],
    );
    for c in &elementary {
        let kind = serde_json::to_value(c.kind)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        e.push(vec![
            kind.into(),
            c.param.into(),
            c.lhs.into(),
            c.rhs.into(),
            c.pass.into(),
        ]);
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    let e_failed = elementary.iter().filter(|c| !c.pass).count();
    let mut s = Section::new(
        "lemmas",
        json!({
            "eps": cfg.eps,
            "a": toll::left_step(cfg.eps)?,
            "b": cfg.b,
            "delta": cfg.delta,
            "c": tails::right_constant(grid),
            "reports": reports,
            "elementary_points": elementary.len(),
        }),
    );
    s.tables = vec![t, e];
    s.checks.push(Check::new(
        "lemmas.tail_lemmas",
        failed as f64,
        "0 failing instances",
        failed == 0,
    ));
    s.checks.push(Check::new(
        "lemmas.elementary",
        e_failed as f64,
        "0 failing instances",
        e_failed == 0,
    ));
    Ok(s)
}

/// Tail fits, envelopes and limsup proxies. With a `coarse` solution the
/// windows are first shrunk to where the two resolutions agree.
pub fn tails_section(
    grid: &DensityGrid,
    coarse: Option<&DensityGrid>,
    cfg: &TailConfig,
) -> Result<Section> {
    let (lw, rw) = match coarse {
        Some(c) => (
            tails::trusted_window(grid, c, Side::Left, cfg.left_window, cfg.max_rel_error)?,
            tails::trusted_window(grid, c, Side::Right, cfg.right_window, cfg.max_rel_error)?,
        ),
        None => (cfg.left_window, cfg.right_window),
    };
    let left = tails::left_envelope_fit(grid, lw)?;
    let right = tails::right_envelope_fit(grid, rw)?;
    let envelopes = tails::fit_envelopes(grid, lw, rw)?;

    let mut lt = Table::new("tail_left.csv", &["x", "value", "model"]);
    for &(x, y) in &left.points {
        lt.push(vec![
            x.into(),
            y.into(),
            (left.slope * x + left.intercept).into(),
        ]);
    }
    let mut rt = Table::new("tail_right.csv", &["x", "value", "model"]);
    for &(x, r) in &right.ratios {
        // conjectured expansion -x ln x - x ln ln x + (1 + ln 2) x, as a ratio
        let l = x.ln();
        let model = 1.0 + l.ln() / l - (1.0 + std::f64::consts::LN_2) / l;
        rt.push(vec![x.into(), r.into(), model.into()]);
    }
    let mut et = Table::new("envelopes.csv", &["side", "kind", "offset"]);
    for e in &envelopes {
        let kind = match e.kind {
            tails::Bound::Lower => "lower",
            tails::Bound::Upper => "upper",
        };
        et.push(vec![
            e.side.to_string().into(),
            kind.into(),
            e.offset.into(),
        ]);
    }

    let mut profiles = Vec::new();
    for (side, (lo, hi)) in [(Side::Left, lw), (Side::Right, rw)] {
        let count = ((hi - lo) / cfg.proxy_step + 1e-9).floor() as usize;
        let xs: Vec<f64> = (0..=count)
            .map(|i| lo + i as f64 * cfg.proxy_step)
            .collect();
        for k in 0..=cfg.proxy_orders {
            profiles.push(tail_sup_norm(grid, k, side, &xs)?);
        }
    }
    let rows = tails::limsup_proxies(&profiles)?;
    let mut pt = Table::new("proxies.csv", &["side", "k", "x", "value", "diff"]);
    for r in &rows {
        pt.push(vec![
            r.side.to_string().into(),
            r.k.into(),
            r.x.into(),
            r.value.into(),
            r.diff.into(),
        ]);
    }
    let mut widths = serde_json::Map::new();
    for k in 0..cfg.proxy_orders {
        widths.insert(
            format!("left_k{k}"),
            json!(tails::proxy_band_width(&rows, Side::Left, k)),
        );
        widths.insert(
            format!("right_k{k}"),
            json!(tails::proxy_band_width(&rows, Side::Right, k)),
        );
    }
    let ratio_at = right.ratio_at(cfg.ratio_x).unwrap_or(f64::NAN);
    let mut s = Section::new(
        "tails",
        json!({
            "left_window": [lw.0, lw.1],
            "right_window": [rw.0, rw.1],
            "left_slope": left.slope,
            "left_intercept": left.intercept,
            "left_r2": left.r2,
            "gamma": GAMMA,
            "ratio_x": cfg.ratio_x,
            "ratio_at_x": ratio_at,
            "band_c": right.band_c,
            "proxy_band_widths": widths,
            "proxy_band_reference": cfg.proxy_band_max,
            "richardson_max_rel_error": cfg.max_rel_error,
            "richardson_applied": coarse.is_some(),
            "caveat": TAIL_CAVEAT,
        }),
    );
    s.tables = vec![lt, rt, et, pt];
    s.checks.push(Check::within(
        "tails.left_slope",
        left.slope,
        cfg.left_slope_band,
    ));
    s.checks
        .push(Check::within("tails.right_ratio", ratio_at, cfg.ratio_band));
    s.checks
        .push(Check::at_most("tails.band_c", right.band_c, cfg.band_c_max));
    Ok(s)
}

/// LK checks for all `(n, k)` with `2 <= n <= n_max`, `k <= n/2` on both
/// tails, the LK lower bounds, `|φ|` decay and the sup bounds on `f^(k)`.
pub fn derivatives_section(grid: &DensityGrid, cfg: &DerivConfig) -> Result<Section> {
    let mut lk = Table::new(
        "lk.csv",
        &[
            "side", "n", "k", "x", "norm_0", "norm_k", "norm_n", "rhs", "ratio", "pass",
        ],
    );
    let mut worst: f64 = 0.0;
    let mut lk_pass = true;
    for n in 2..=cfg.n_max {
        for k in 1..=n / 2 {
            for side in [Side::Left, Side::Right] {
                let r = deriv::verify_lk(grid, side, k, n, &cfg.xs, cfg.lk_slack)?;
                worst = worst.max(r.worst_ratio);
                lk_pass &= r.pass;
                for row in &r.rows {
                    lk.push(vec![
                        side.to_string().into(),
                        n.into(),
                        k.into(),
                        row.x.into(),
                        row.norm_0.into(),
                        row.norm_k.into(),
                        row.norm_n.into(),
                        row.rhs.into(),
                        row.ratio.into(),
                        row.pass.into(),
                    ]);
                }
            }
        }
    }
    let mut lower = Table::new(
        "lk_lower.csv",
        &["side", "k", "x", "bound", "direct", "pass"],
    );
    let mut lower_pass = true;
    for k in 2..=cfg.n_max {
        for side in [Side::Left, Side::Right] {
            for &x in &cfg.xs {
                let r = deriv::lower_bound_from_lk(grid, side, k, x, cfg.lk_slack)?;
                lower_pass &= r.pass;
                lower.push(vec![
                    side.to_string().into(),
                    k.into(),
                    x.into(),
                    r.bound.into(),
                    r.direct.into(),
                    r.pass.into(),
                ]);
            }
        }
    }
    let phi = deriv::phi_from_grid(grid, &deriv::default_ts(grid, cfg.phi_points))?;
    let mut phi_t = Table::new("phi.csv", &["t", "abs_phi"]);
    for (t, a) in phi.ts.iter().zip(&phi.phi_abs) {
        phi_t.push(vec![(*t).into(), (*a).into()]);
    }
    let decay: Vec<f64> = (0..=cfg.phi_p_max)
        .map(|p| phi.worst_decay_ratio(p))
        .collect();
    let decay_worst = decay.iter().cloned().fold(0.0, f64::max);

    let mut fk = Table::new("fk_bounds.csv", &["k", "grid_sup", "bound"]);
    let mut fk_pass = true;
    for k in 0..=cfg.fk_max_order {
        let sup = deriv::grid_sup_derivative(grid, k)?;
        let bound = deriv::fk_sup_bound(k);
        fk_pass &= sup <= bound;
        fk.push(vec![k.into(), sup.into(), bound.into()]);
    }
    let mut ank = Table::new("a_nk.csv", &["n", "k", "log2"]);
    for n in 2..=cfg.n_max {
        for k in 0..=cfg.fk_max_order {
            ank.push(vec![n.into(), k.into(), deriv::a_nk(n, k)?.log2.into()]);
        }
    }
    let mut s = Section::new(
        "derivatives",
        json!({
            "lk_slack": cfg.lk_slack,
            "lk_worst_ratio": worst,
            "phi_nyquist": deriv::nyquist(grid),
            "phi_zero": phi.phi_abs.first(),
            "phi_decay_worst_by_p": decay,
            "f_prime_sign_changes": deriv::derivative_sign_changes(grid)?,
        }),
    );
    let lower_count = lower.rows.len() as f64;
    s.tables = vec![lk, lower, phi_t, fk, ank];
    s.checks.push(Check::new(
        "derivatives.lk",
        worst,
        format!("<= {} at every point", fmt_f64(cfg.lk_slack)),
        lk_pass,
    ));
    s.checks.push(Check::new(
        "derivatives.lk_lower",
        lower_count,
        "direct * slack >= bound",
        lower_pass,
    ));
    s.checks.push(Check::at_most(
        "derivatives.phi_decay",
        decay_worst,
        1.0 + PHI_ROUNDING,
    ));
    s.checks.push(Check::new(
        "derivatives.fk_bound",
        cfg.fk_max_order as f64,
        "sup |f^(k)| <= 2^(k^2+10k+17)",
        fk_pass,
    ));
    Ok(s)
}

/// Result of a pipeline run: sections in emission order and the manifest.
#[derive(Debug)]
pub struct Outcome {
    pub sections: Vec<Section>,
    pub manifest: RunManifest,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.sections.iter().all(Section::passed)
    }
}

/// The full pipeline behind `qslab report`.
pub fn run_report(cfg: &RunConfig, config_text: &str, seed: u64, dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let mut run = Run::new(dir, "report", config_text, seed)?;
    let mut sections = Vec::new();

    let (moments, _) = run.timed("moments", || moments_section(&cfg.moments, true))?;
    sections.push(moments);

    let samples = run.timed("simulation", || simulate(&cfg.simulation, seed))?;
    run.write_samples("samples.qszs", &samples)?;
    sections.push(simulation_section(
        &cfg.simulation,
        &samples,
        "samples.qszs",
    ));

    let (solve, grid) = run.timed("solve", || solve_section(&cfg.solver, "solver"))?;
    sections.push(solve);
    let Some(grid) = grid else {
        run.emit(&sections)?;
        return Ok(Outcome {
            sections,
            manifest: run.finish()?,
        });
    };
    run.write_grid("grid.qsdg", &grid)?;
    run.write_text("grid.json", &to_json17(&grid.to_json())?)?;

    let mut fp = run.timed("ks", || {
        fixed_point_section(&grid, Some(&samples), &cfg.fixed_point)
    });
    drop(samples);
    if cfg.fixed_point.init_independence {
        let ucfg = SolverConfig {
            init: Init::Uniform,
            ..cfg.solver.clone()
        };
        let (usec, ugrid) =
            run.timed("solve_uniform", || solve_section(&ucfg, "solver_uniform"))?;
        sections.push(usec);
        if let Some(u) = ugrid {
            run.write_grid("grid_uniform.qsdg", &u)?;
            let d = linf_distance(&grid, &u)?;
            fp.summary["init_linf"] = json!(d);
            fp.checks.push(Check::at_most(
                "fixed_point.init_independence",
                d,
                cfg.fixed_point.linf_factor * cfg.solver.tol_l1,
            ));
        }
    }
    sections.push(fp);

    let ccfg = SolverConfig {
        n_points: cfg.tails.richardson_n_points,
        ..cfg.solver.clone()
    };
    let (csec, coarse) = run.timed("solve_coarse", || solve_section(&ccfg, "solver_coarse"))?;
    sections.push(csec);
    if let Some(c) = &coarse {
        run.write_grid("grid_coarse.qsdg", c)?;
    }

    sections.push(run.timed("lemmas", || lemma_section(&grid, &cfg.lemmas))?);
    sections.push(run.timed("tails", || {
        tails_section(&grid, coarse.as_ref(), &cfg.tails)
    })?);
    sections.push(run.timed("derivatives", || {
        derivatives_section(&grid, &cfg.derivatives)
    })?);

    run.emit(&sections)?;
    Ok(Outcome {
        sections,
        manifest: run.finish()?,
    })
}
