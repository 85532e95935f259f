//! Batch front end: configuration file, the `green`, `frontier`, `verify`
//! and `flow` subcommands, hashed manifests and exit-code mapping.
//!
//! Every output file carries the hash of the configuration that produced it
//! (a leading `# config_hash` line in CSV files, a `config_hash` key in JSON
//! files, a header field in checkpoints). The hash covers the configuration
//! in canonical JSON form together with the profile file contents; the
//! output directory and thread count are excluded.

use crate::deformation_flow::{
    read_checkpoint, run_to, write_checkpoint, find_frontier, FlowConfig, FlowError, Grid, RunOutcome, Terminating, CHARTS,
};
use crate::diagnostics::{identity_suite, lie_derivative_check, ma_residual, psh_margin, Check, Report};
use crate::domain_profile::{minkowski, straighten, unstraighten, ProfileError, ProfileRho};
use crate::jet::C64;
use crate::polar_geometry::AmbientPoint;
use crate::special_fields::{Direction, FieldError};
use crate::transport::{green_grid, ExhaustionSample, PhiPath, Transport, TransportError, TransportOptions};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "mongeflow", version, about = "Monge-Ampere exhaustions of circular domains by deformation flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory, overriding the configuration's `output`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Transport a query set and write `green_grid.csv`.
    Green,
    /// Locate the frontier along each direction and write `frontier.json`.
    Frontier,
    /// Run the diagnostics and write `report.json`.
    Verify,
    /// Run the deformation flow only and write checkpoints.
    Flow,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Green => "green",
            Command::Frontier => "frontier",
            Command::Verify => "verify",
            Command::Flow => "flow",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Exit code 2.
    #[error("invalid input: {0}")]
    Input(String),
    /// Exit code 1.
    #[error("run failed: {0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Degenerate { .. } | FlowError::Unstable { .. } | FlowError::NonMonotone { .. } => CliError::Run(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Config(_) | TransportError::Field(_) => CliError::Input(e.to_string()),
            TransportError::Flow(f) => f.into(),
            _ => CliError::Run(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nw: usize,
    pub nr: usize,
    pub nth: usize,
    pub wmax: f64,
    pub rmin: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = FlowConfig::default().grid;
        GridConfig { nw: g.nw, nr: g.nr, nth: g.nth, wmax: g.wmax, rmin: g.rmin }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub eps_deg: f64,
    pub ode_tol: f64,
    pub event_tol: f64,
    pub s_tol: f64,
    pub unstable_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let f = FlowConfig::default();
        Tolerances { eps_deg: f.eps_deg, ode_tol: TransportOptions::default().tol, event_tol: f.event_tol, s_tol: f.s_tol, unstable_floor: f.unstable_floor }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreenConfig {
    /// Random queries drawn on the domain with `mu < max_mu`.
    pub samples: usize,
    pub max_mu: f64,
    /// Additional explicit queries, `(Re z1, Im z1, Re z2, Im z2)`.
    pub points: Vec<[f64; 4]>,
}

impl Default for GreenConfig {
    fn default() -> Self {
        GreenConfig { samples: 1000, max_mu: 0.98, points: vec![[0.0; 4]] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub identity_points: usize,
    pub residual_tol: f64,
    pub ma_probes: usize,
    pub ma_h: f64,
    pub ma_tol: f64,
    /// Minimum distance of Monge-Ampere probes from the pole.
    pub pole_clearance: f64,
    /// Probes satisfy `mu <= max_mu`.
    pub max_mu: f64,
    pub lie_probes: usize,
    pub lie_t: f64,
    pub lie_dt: f64,
    pub lie_tol: f64,
    /// Checkpoint file to validate, relative to the configuration file.
    pub checkpoint: Option<String>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            identity_points: 200,
            residual_tol: 1e-5,
            ma_probes: 100,
            ma_h: 4e-3,
            ma_tol: 1e-3,
            pole_clearance: 0.25,
            max_mu: 0.9,
            lie_probes: 20,
            lie_t: 0.5,
            lie_dt: 1e-2,
            lie_tol: 1e-3,
            checkpoint: None,
        }
    }
}

fn default_s() -> f64 {
    1.0
}

fn default_ckpt() -> f64 {
    0.1
}

/// Contents of the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Profile file, relative to the configuration file.
    pub profile: String,
    /// `v0` as `2n` reals `(Re v1, Im v1, Re v2, Im v2)`.
    pub direction: Vec<f64>,
    #[serde(default = "default_s")]
    pub s: f64,
    /// Frontier mode: sample this many directions of norm `|v0|` spread over
    /// `CP^1` instead of using `direction` alone.
    #[serde(default)]
    pub fan: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Snapshot spacing of the flow history; `0` keeps every step.
    #[serde(default = "default_ckpt")]
    pub checkpoint_dt: f64,
    #[serde(default, skip_serializing)]
    pub output: Option<String>,
    #[serde(default)]
    pub green: GreenConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            CliError::Input(format!("config line {}: {}", e.span().map(|s| line_of(text, s.start)).unwrap_or(0), e.message()))
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(m));
        if self.direction.len() != 4 {
            return bad(format!("direction needs 4 reals, got {}", self.direction.len()));
        }
        let v = self.v0();
        if v.norm() >= 1.0 {
            return bad(format!("direction norm {} is not below 1", v.norm()));
        }
        if !(0.0..=1.0).contains(&self.s) {
            return bad(format!("s = {} outside [0, 1]", self.s));
        }
        let g = &self.grid;
        if g.nw < 17 || g.nr < 9 || g.nth < 16 {
            return bad(format!("grid {}x{}x{} below the minimum 17x9x16", g.nw, g.nr, g.nth));
        }
        let t = &self.tolerances;
        for (name, x) in [("eps_deg", t.eps_deg), ("ode_tol", t.ode_tol), ("event_tol", t.event_tol), ("s_tol", t.s_tol), ("unstable_floor", t.unstable_floor)] {
            if !(x > 0.0) {
                return bad(format!("tolerance {name} = {x} must be positive"));
            }
        }
        if self.checkpoint_dt < 0.0 {
            return bad(format!("checkpoint_dt = {} is negative", self.checkpoint_dt));
        }
        if self.fan == Some(0) {
            return bad("fan must be at least 1".into());
        }
        Ok(())
    }

    pub fn v0(&self) -> Direction {
        let d = &self.direction;
        Direction { v: vec![C64::new(d[0], d[1]), C64::new(d[2], d[3])] }
    }

    pub fn flow_config(&self) -> Result<FlowConfig, CliError> {
        let g = &self.grid;
        let grid = Grid::new(g.nw, g.nr, g.nth, g.wmax, g.rmin)?;
        let t = &self.tolerances;
        Ok(FlowConfig {
            grid,
            eps_deg: t.eps_deg,
            event_tol: t.event_tol,
            s_tol: t.s_tol,
            unstable_floor: t.unstable_floor,
            checkpoint_dt: Some(self.checkpoint_dt),
            ..FlowConfig::default()
        })
    }

    pub fn transport_options(&self) -> TransportOptions {
        TransportOptions { tol: self.tolerances.ode_tol, eps_deg: self.tolerances.eps_deg, ..TransportOptions::default() }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

/// A loaded configuration with its resolved profile and hash.
pub struct Loaded {
    pub config: RunConfig,
    pub rho: ProfileRho,
    pub base: PathBuf,
    pub config_hash: String,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let config = RunConfig::parse(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let ppath = base.join(&config.profile);
    let ptext = std::fs::read_to_string(&ppath).map_err(|e| io_err(&ppath, e))?;
    let rho = crate::domain_profile::parse_profile(&ptext).map_err(|e| CliError::Input(format!("{}: {e}", ppath.display())))?;
    let canon = serde_json::to_string(&config).expect("config serializes");
    let config_hash = sha256_hex(format!("{canon}\n{ptext}").as_bytes());
    Ok(Loaded { config, rho, base, config_hash })
}

/// Extremes of the flow monitors over a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorExtrema {
    pub min_margin: f64,
    pub max_phi: f64,
    pub c_res: f64,
    pub d_res: f64,
    pub t_reached: f64,
}

fn extrema(out: &RunOutcome) -> MonitorExtrema {
    let m = out.state.monitors;
    let min_margin = out.report.margin_curve.iter().fold(m.degeneracy_margin, |a, p| a.min(p.1));
    MonitorExtrema { min_margin, max_phi: m.phi_max, c_res: m.c_res, d_res: m.d_res_f0.max(m.d_res_fgamma), t_reached: out.state.t }
}

/// Run record written next to every set of outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: String,
    /// Output file name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
    pub monitors: Vec<MonitorExtrema>,
    pub wall_time_s: f64,
    /// SHA-256 over every other field except `wall_time_s`.
    pub manifest_hash: String,
}

impl Manifest {
    pub fn compute_hash(&self) -> String {
        let mut m = self.clone();
        m.wall_time_s = 0.0;
        m.manifest_hash = String::new();
        sha256_hex(serde_json::to_string(&m).expect("manifest serializes").as_bytes())
    }
}

struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Outputs { dir, files: BTreeMap::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn record(&mut self, name: &str) -> Result<(), CliError> {
        let p = self.dir.join(name);
        let bytes = std::fs::read(&p).map_err(|e| io_err(&p, e))?;
        self.files.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }
}

/// Result of one subcommand: the manifest and whether the run succeeded.
pub struct Finished {
    pub manifest: Manifest,
    pub failure: Option<CliError>,
}

fn random_domain_points(rho: &ProfileRho, rng: &mut ChaCha8Rng, count: usize, max_mu: f64, keep: impl Fn(&AmbientPoint) -> bool) -> Vec<AmbientPoint> {
    let mut out = Vec::with_capacity(count);
    let mut budget = count * 10_000 + 1000;
    while out.len() < count && budget > 0 {
        budget -= 1;
        let z: Vec<C64> = (0..2).map(|_| C64::new(rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2))).collect();
        let q = AmbientPoint::new(z);
        if minkowski(rho, &q) < max_mu && keep(&q) {
            out.push(q);
        }
    }
    out
}

/// Directions of norm `radius` on a Fibonacci spiral of `CP^1 = S^2`.
pub fn fan_directions(radius: f64, count: usize) -> Vec<Direction> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let h = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let polar = h.clamp(-1.0, 1.0).acos();
            let az = golden * k as f64;
            let (a, b) = ((0.5 * polar).cos(), (0.5 * polar).sin());
            Direction { v: vec![C64::new(radius * a, 0.0), C64::from_polar(radius * b, az)] }
        })
        .collect()
}

fn flow_for(ld: &Loaded, s: f64, keep_all: bool) -> Result<RunOutcome, CliError> {
    let mut cfg = ld.config.flow_config()?;
    if keep_all {
        cfg.checkpoint_dt = Some(0.0);
    }
    Ok(run_to(s, &ld.config.v0(), &ld.rho, &cfg, None)?)
}

fn transport_for(ld: &Loaded, out: &RunOutcome, s: f64) -> Result<Transport, CliError> {
    if out.report.terminating != Terminating::ReachedOne {
        return Err(CliError::Run(format!("flow stopped at t = {:.4} ({:?})", out.state.t, out.report.terminating)));
    }
    let path = PhiPath::from_state(&out.state)?;
    Ok(Transport::new(path, &ld.rho, &ld.config.v0(), s, ld.config.transport_options())?.with_pole()?)
}

fn cmd_green(ld: &Loaded, o: &mut Outputs, mons: &mut Vec<MonitorExtrema>) -> Result<(), CliError> {
    let c = &ld.config;
    let out = flow_for(ld, c.s, true)?;
    mons.push(extrema(&out));
    let tr = transport_for(ld, &out, c.s)?;
    let mut queries: Vec<AmbientPoint> = c.green.points.iter().map(|p| AmbientPoint::new(vec![C64::new(p[0], p[1]), C64::new(p[2], p[3])])).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    queries.extend(random_domain_points(&ld.rho, &mut rng, c.green.samples, c.green.max_mu, |_| true));
    let samples = green_grid(&tr, &queries, true)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ExhaustionSample::csv_header()).map_err(|e| CliError::Run(e.to_string()))?;
    for smp in &samples {
        w.write_record(smp.csv_row()).map_err(|e| CliError::Run(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| CliError::Run(e.to_string()))?;
    let mut bytes = format!("# config_hash {}\n", ld.config_hash).into_bytes();
    bytes.extend(body);
    o.write("green_grid.csv", &bytes)
}

#[derive(Serialize)]
struct FrontierEntry {
    direction: [f64; 4],
    s_o: f64,
    lambda_v: f64,
    terminating: Terminating,
    margin_curve: Vec<(f64, f64)>,
}

fn cmd_frontier(ld: &Loaded, o: &mut Outputs) -> Result<(), CliError> {
    let c = &ld.config;
    let cfg = c.flow_config()?;
    let v0 = c.v0();
    let dirs = match c.fan {
        Some(k) => fan_directions(v0.norm(), k),
        None => vec![v0],
    };
    let mut entries = Vec::new();
    let mut failure = None;
    for d in &dirs {
        match find_frontier(d, &ld.rho, &cfg) {
            Ok(r) => entries.push(FrontierEntry {
                direction: [d.v[0].re, d.v[0].im, d.v[1].re, d.v[1].im],
                s_o: r.s_o,
                lambda_v: r.s_o * d.norm(),
                terminating: r.terminating,
                margin_curve: r.margin_curve,
            }),
            Err(e) => {
                failure.get_or_insert(CliError::from(e));
            }
        }
    }
    let doc = serde_json::json!({ "config_hash": ld.config_hash, "directions": entries });
    o.write("frontier.json", serde_json::to_string_pretty(&doc).expect("json").as_bytes())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_flow(ld: &Loaded, o: &mut Outputs, mons: &mut Vec<MonitorExtrema>) -> Result<(), CliError> {
    let c = &ld.config;
    let out = flow_for(ld, c.s, false)?;
    mons.push(extrema(&out));
    let grid = out.state.grid;
    let mut states: Vec<(f64, crate::deformation_flow::Phi)> = out.state.history.iter().map(|s| (s.t, s.expand(&grid))).collect();
    if states.last().map(|s| s.0) != Some(out.state.t) {
        states.push((out.state.t, out.state.phi.clone()));
    }
    for (k, (t, phi)) in states.iter().enumerate() {
        for (ci, chart) in CHARTS.iter().enumerate() {
            let name = format!("checkpoint_{k:03}_chart{}.bin", chart.axis);
            let field = crate::deformation_flow::DeformationField { chart: *chart, grid, values: phi[ci].clone() };
            write_checkpoint(&o.dir.join(&name), &field, *t, Some(&ld.config_hash))?;
            o.record(&name)?;
        }
    }
    let doc = serde_json::json!({
        "config_hash": ld.config_hash,
        "terminating": out.report.terminating,
        "s_o": out.report.s_o,
        "steps": out.steps,
        "dt": out.dt,
        "monitors": out.state.monitors,
        "margin_curve": out.report.margin_curve,
    });
    o.write("flow.json", serde_json::to_string_pretty(&doc).expect("json").as_bytes())?;
    if out.report.terminating != Terminating::ReachedOne {
        return Err(CliError::Run(format!("flow stopped at t = {:.4} ({:?})", out.state.t, out.report.terminating)));
    }
    Ok(())
}

/// Config hashes recorded in existing outputs of `dir`.
fn recorded_hashes(dir: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let Ok(rd) = std::fs::read_dir(dir) else { return out };
    let mut names: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
    names.sort();
    for p in names {
        let name = p.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
        let hash = if name.ends_with(".json") {
            std::fs::read_to_string(&p)
                .ok()
                .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
                .and_then(|v| v.get("config_hash").and_then(|h| h.as_str()).map(String::from))
        } else if name.ends_with(".csv") {
            std::fs::read_to_string(&p).ok().and_then(|t| t.lines().next().and_then(|l| l.strip_prefix("# config_hash ")).map(String::from))
        } else if name.ends_with(".bin") {
            read_checkpoint(&p).ok().and_then(|c| c.config_hash)
        } else {
            None
        };
        if let Some(h) = hash {
            out.push((name, h));
        }
    }
    out
}

fn cmd_verify(ld: &Loaded, o: &mut Outputs, mons: &mut Vec<MonitorExtrema>) -> Result<(), CliError> {
    let c = &ld.config;
    let vc = &c.verify;
    for (name, h) in recorded_hashes(&o.dir) {
        if h != ld.config_hash {
            return Err(CliError::Input(format!("{name} in the output directory was written by another configuration ({h})")));
        }
    }
    if let Some(ck) = &vc.checkpoint {
        let p = ld.base.join(ck);
        let cp = read_checkpoint(&p)?;
        if let Some(h) = cp.config_hash {
            if h != ld.config_hash {
                return Err(CliError::Input(format!("checkpoint {} was written by another configuration ({h})", p.display())));
            }
        }
    }
    let mut report = identity_suite(&ld.rho, c.seed, vc.identity_points)?;
    let out = flow_for(ld, c.s, true)?;
    let ex = extrema(&out);
    mons.push(ex.clone());
    report.checks.push(Check::at_most("flow reaches t = 1", 1.0 - ex.t_reached, 0.0));
    report.checks.push(Check::above("degeneracy margin", ex.min_margin, c.tolerances.eps_deg));
    report.checks.push(Check::at_most("condition C residual", ex.c_res, vc.residual_tol));
    report.checks.push(Check::at_most("condition D residual", ex.d_res, vc.residual_tol));
    if out.report.terminating == Terminating::ReachedOne {
        let tr = transport_for(ld, &out, c.s)?;
        let pole_d = unstraighten(&ld.rho, &tr.pole()?);
        let clearance = vc.pole_clearance.max(2.0 * vc.ma_h);
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed.wrapping_add(1));
        let probes = random_domain_points(&ld.rho, &mut rng, vc.ma_probes, vc.max_mu, |q| {
            q.z.iter().zip(&pole_d.z).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() > clearance
        });
        let green = |x: &AmbientPoint| tr.green_domain(x);
        let tau = |x: &AmbientPoint| tr.green_domain(x).map(f64::exp);
        use rayon::prelude::*;
        let per: Vec<(f64, f64, f64)> = probes
            .par_iter()
            .map(|x| {
                let coarse = ma_residual(&green, x, vc.ma_h)?;
                let fine = ma_residual(&green, x, 0.5 * vc.ma_h)?;
                Ok((coarse, fine, psh_margin(&tau, x, vc.ma_h)?))
            })
            .collect::<Result<_, TransportError>>()?;
        let coarse = per.iter().fold(0.0f64, |a, p| a.max(p.0));
        let fine = per.iter().fold(0.0f64, |a, p| a.max(p.1));
        let psh = per.iter().fold(f64::INFINITY, |a, p| a.min(p.2));
        report.checks.push(Check::at_most("Monge-Ampere residual", fine, vc.ma_tol));
        report.checks.push(Check::at_most("Monge-Ampere refinement ratio", fine / coarse.max(f64::MIN_POSITIVE), 0.5));
        report.checks.push(Check::above("plurisubharmonicity margin", psh, 0.0));
        let ball: Vec<AmbientPoint> = probes.iter().take(vc.lie_probes).map(|q| straighten(&ld.rho, q)).collect();
        let lie = lie_derivative_check(&tr, vc.lie_t, vc.lie_dt, &ball)?;
        report.checks.push(Check::at_most("fundamental pair relation", lie, vc.lie_tol));
    }
    write_report(o, ld, &report)?;
    if report.all_pass() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|k| !k.pass).map(|k| k.name.as_str()).collect();
        Err(CliError::Run(format!("failed checks: {}", failed.join(", "))))
    }
}

fn write_report(o: &mut Outputs, ld: &Loaded, report: &Report) -> Result<(), CliError> {
    let doc = serde_json::json!({ "config_hash": ld.config_hash, "all_pass": report.all_pass(), "checks": report.checks });
    o.write("report.json", serde_json::to_string_pretty(&doc).expect("json").as_bytes())
}

/// Runs one subcommand and writes its manifest. Invalid input returns
/// `Err` before anything is written; run-level failures still write the
/// manifest and return it with `failure` set.
pub fn execute(cli: &Cli) -> Result<Finished, CliError> {
    let start = Instant::now();
    let cpath = cli.config.as_ref().ok_or_else(|| CliError::Input("--config <path> is required".into()))?;
    let ld = load(cpath)?;
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let dir = match (&cli.out, &ld.config.output) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => ld.base.join(d),
        (None, None) => PathBuf::from("out"),
    };
    let mut o = Outputs::new(dir)?;
    let mut mons = Vec::new();
    let result = match cli.command {
        Command::Green => cmd_green(&ld, &mut o, &mut mons),
        Command::Frontier => cmd_frontier(&ld, &mut o),
        Command::Verify => cmd_verify(&ld, &mut o, &mut mons),
        Command::Flow => cmd_flow(&ld, &mut o, &mut mons),
    };
    let failure = match result {
        Ok(()) => None,
        Err(e @ CliError::Input(_)) => return Err(e),
        Err(e) => Some(e),
    };
    let mut manifest = Manifest {
        tool: "mongeflow".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: cli.command.name().into(),
        config_hash: ld.config_hash.clone(),
        seed: ld.config.seed,
        status: failure.as_ref().map(|e| e.to_string()).unwrap_or_else(|| "ok".into()),
        outputs: o.files.clone(),
        monitors: mons,
        wall_time_s: start.elapsed().as_secs_f64(),
        manifest_hash: String::new(),
    };
    manifest.manifest_hash = manifest.compute_hash();
    let p = o.dir.join("manifest.json");
    std::fs::write(&p, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(|e| io_err(&p, e))?;
    Ok(Finished { manifest, failure })
}

/// Exit code for a finished or rejected invocation.
pub fn exit_code(r: &Result<Finished, CliError>) -> i32 {
    match r {
        Ok(f) => f.failure.as_ref().map(CliError::exit_code).unwrap_or(0),
        Err(e) => e.exit_code(),
    }
}
