//! Command-line orchestration: configuration, run manifests, output files,
//! and the `simulate`, `train`, `bayes`, `jsd`, `bands`, and `verify`
//! subcommands.
//!
//! Every command reads one optional TOML configuration file, applies
//! `--set section.key=value` overrides, hashes the merged configuration,
//! and stamps that hash into a run manifest and into a comment line at the
//! top of every CSV it writes. Given the same configuration and seeds, every
//! command reproduces its outputs byte for byte.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes::{
    build_likelihood_grid, mle, posterior_moments, sample_record, update_posterior,
    GridBuildConfig, GridSpec, LikelihoodGrid, MeasurementRecord, PosteriorGrid,
};
use crate::designer::{self, train, EnvConfig, Hyperparameters, RewardKind};
use crate::divergence::{curvature_check, effective_range, jsd_map, ProfileAxis, RangeOptions, SliceSpec};
use crate::dynamics::{
    band_occupations, momentum_distribution, position_density, propagate_augmented,
    propagate_observed, AugmentedState, ControlProtocol, EstimationPoint, ProtocolFile,
    SolverSettings, DEFAULT_OMEGA_S_OVER_OMEGA_R, DEFAULT_STEPS_PER_SEGMENT,
};
use crate::estimation::{
    cfim, fisher_matrices, min_eigenvalue_2x2, qfim, sensitivity_report, SensitivityReport,
    PROBABILITY_FLOOR,
};
use crate::freespace::{analytic_accel_qfim, FreeSpaceScenario};
use crate::physcore::{bloch_diagonalize, build_basis, ground_state, PhysicalScales, StateVector};

/// Incremental content hasher with a canonical encoding for the value types
/// that enter cache keys and manifests. Floats hash by their exact bit
/// pattern, so any numerical difference produces a different key.
pub struct Hasher {
    inner: Sha256,
}

impl Hasher {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        Self {
            inner: Sha256::new(),
        }
    }

    pub fn tag(&mut self, label: &str) {
        self.inner.update([0x74]);
        self.inner.update((label.len() as u64).to_le_bytes());
        self.inner.update(label.as_bytes());
    }

    pub fn f64(&mut self, value: f64) {
        self.inner.update([0x66]);
        self.inner.update(value.to_bits().to_le_bytes());
    }

    pub fn u64(&mut self, value: u64) {
        self.inner.update([0x75]);
        self.inner.update(value.to_le_bytes());
    }

    pub fn bytes(&mut self, value: &[u8]) {
        self.inner.update([0x62]);
        self.inner.update((value.len() as u64).to_le_bytes());
        self.inner.update(value);
    }

    /// Hex digest, truncated to 16 bytes (32 hex chars) for readable
    /// filenames while keeping collisions out of reach.
    pub fn finish(self) -> String {
        let digest = self.inner.finalize();
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Failures surfaced to the shell. Configuration problems exit with code 2,
/// everything else (including verification failures) with code 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

fn config_err(message: impl Display) -> CliError {
    CliError::Config(message.to_string())
}

fn run_err(message: impl Display) -> CliError {
    CliError::Run(message.to_string())
}

// ---------------------------------------------------------------------------
// Configuration file
// ---------------------------------------------------------------------------

/// Unit system, comb, and working point shared by every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    /// Atomic mass in unified atomic mass units.
    pub mass_amu: f64,
    /// Lattice laser wavelength in nanometers.
    pub wavelength_nm: f64,
    /// Momentum comb truncation.
    pub n_max: usize,
    /// Quasimomentum of the prepared atoms, recoil momenta.
    pub q: f64,
    /// Lattice depth at the working point, recoil energies.
    pub depth_er: f64,
    /// Acceleration at the working point, units of g.
    pub a_over_g: f64,
    /// Integrator steps per drive segment when no protocol file pins them.
    pub steps_per_segment: usize,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            mass_amu: 86.9,
            wavelength_nm: 1064.0,
            n_max: 10,
            q: 0.0,
            depth_er: 10.0,
            a_over_g: 0.0,
            steps_per_segment: DEFAULT_STEPS_PER_SEGMENT,
        }
    }
}

impl PhysicsConfig {
    pub fn scales(&self) -> Result<PhysicalScales, CliError> {
        PhysicalScales::new(self.mass_amu, self.wavelength_nm).map_err(config_err)
    }

    pub fn point(&self) -> EstimationPoint {
        EstimationPoint::new(self.a_over_g, self.depth_er)
    }
}

/// Protocol source when no `--protocol` flag is given: either a file path or
/// inline amplitudes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Path to a protocol file.
    pub file: Option<PathBuf>,
    /// Inline shaking amplitudes, radians per segment.
    pub segment_amplitudes: Vec<f64>,
    /// Drive frequency over the recoil frequency, for inline amplitudes.
    pub omega_s_over_omega_r: Option<f64>,
}

/// Designer training setup; episode physics comes from `[physics]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignerConfig {
    /// Protocol segments per episode.
    pub segments: usize,
    pub episodes: usize,
    pub gamma: f64,
    /// Soft-update weight toward the online network.
    pub tau: f64,
    /// Adam learning rate.
    pub alpha: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub epsilon_basis: designer::EpsilonBasis,
    pub bellman: designer::BellmanMode,
    pub hidden: usize,
    pub batch: usize,
    pub replay_capacity: usize,
    /// Gradient steps taken after each episode.
    pub train_steps_per_episode: usize,
    pub seed: u64,
    pub reward: RewardKind,
}

impl Default for DesignerConfig {
    fn default() -> Self {
        let h = Hyperparameters::default();
        Self {
            segments: 32,
            episodes: h.episodes,
            gamma: h.gamma,
            tau: h.tau,
            alpha: h.alpha,
            epsilon_decay: h.epsilon_decay,
            epsilon_floor: h.epsilon_floor,
            epsilon_basis: h.epsilon_basis,
            bellman: h.bellman,
            hidden: h.hidden,
            batch: h.batch,
            replay_capacity: h.replay_capacity,
            train_steps_per_episode: h.train_steps_per_episode,
            seed: h.seed,
            reward: RewardKind::AccelMarginal,
        }
    }
}

impl DesignerConfig {
    pub fn env(&self, physics: &PhysicsConfig) -> EnvConfig {
        EnvConfig {
            segments: self.segments,
            n_max: physics.n_max,
            q: physics.q,
            steps_per_segment: physics.steps_per_segment,
            depth_er: physics.depth_er,
            a_over_g: physics.a_over_g,
            reward: self.reward,
            ..EnvConfig::default()
        }
    }

    pub fn hyper(&self) -> Hyperparameters {
        Hyperparameters {
            gamma: self.gamma,
            tau: self.tau,
            alpha: self.alpha,
            episodes: self.episodes,
            epsilon_decay: self.epsilon_decay,
            epsilon_floor: self.epsilon_floor,
            epsilon_basis: self.epsilon_basis,
            bellman: self.bellman,
            hidden: self.hidden,
            batch: self.batch,
            replay_capacity: self.replay_capacity,
            train_steps_per_episode: self.train_steps_per_episode,
            seed: self.seed,
        }
    }
}

/// Likelihood-grid bounds and measurement plan for `bayes` (the same grid
/// bounds feed `jsd`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesConfig {
    pub a_min_over_g: f64,
    pub a_max_over_g: f64,
    pub a_count: usize,
    pub v_min_er: f64,
    pub v_max_er: f64,
    pub v_count: usize,
    /// True acceleration of the simulated experiment, units of g.
    pub truth_a_over_g: f64,
    /// True lattice depth, recoil energies.
    pub truth_depth_er: f64,
    /// Measurements drawn per seed.
    pub shots: usize,
    pub seeds: Vec<u64>,
    /// Record prefixes at which posterior snapshots are written.
    pub snapshots: Vec<usize>,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            a_min_over_g: -0.1,
            a_max_over_g: 0.1,
            a_count: 101,
            v_min_er: 9.0,
            v_max_er: 11.0,
            v_count: 101,
            truth_a_over_g: 0.0,
            truth_depth_er: 10.0,
            shots: 1000,
            seeds: vec![1],
            snapshots: vec![1, 10, 100, 1000],
        }
    }
}

impl BayesConfig {
    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        GridSpec::new(
            self.a_min_over_g,
            self.a_max_over_g,
            self.a_count,
            self.v_min_er,
            self.v_max_er,
            self.v_count,
        )
        .map_err(config_err)
    }

    pub fn truth(&self) -> EstimationPoint {
        EstimationPoint::new(self.truth_a_over_g, self.truth_depth_er)
    }
}

/// Which divergence slice `jsd` renders.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SliceKind {
    AccelPair,
    DepthPair,
    Joint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JsdConfig {
    pub slice: SliceKind,
    /// Fixed depth for acceleration slices, recoil energies.
    pub v_er: f64,
    /// Fixed acceleration for depth slices, units of g.
    pub a_over_g: f64,
    /// Reference acceleration for joint maps, curvature, and range.
    pub ref_a_over_g: f64,
    /// Reference depth for joint maps, curvature, and range.
    pub ref_v_er: f64,
}

impl Default for JsdConfig {
    fn default() -> Self {
        Self {
            slice: SliceKind::AccelPair,
            v_er: 10.0,
            a_over_g: 0.0,
            ref_a_over_g: 0.0,
            ref_v_er: 10.0,
        }
    }
}

impl JsdConfig {
    pub fn slice_spec(&self) -> SliceSpec {
        match self.slice {
            SliceKind::AccelPair => SliceSpec::AccelPair { v_er: self.v_er },
            SliceKind::DepthPair => SliceSpec::DepthPair {
                a_over_g: self.a_over_g,
            },
            SliceKind::Joint => SliceSpec::Joint {
                reference: EstimationPoint::new(self.ref_a_over_g, self.ref_v_er),
            },
        }
    }

    pub fn reference(&self) -> EstimationPoint {
        EstimationPoint::new(self.ref_a_over_g, self.ref_v_er)
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub physics: PhysicsConfig,
    pub protocol: ProtocolConfig,
    pub designer: DesignerConfig,
    pub bayes: BayesConfig,
    pub jsd: JsdConfig,
}

/// Reads the configuration file (when given), applies `--set` overrides,
/// and returns the merged configuration with its content hash.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<(AppConfig, String), CliError> {
    let mut tree: toml::Value = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?
        }
        None => toml::Value::Table(toml::map::Map::new()),
    };
    for spec in overrides {
        apply_override(&mut tree, spec)?;
    }
    let config: AppConfig = tree.try_into().map_err(config_err)?;
    let canonical = serde_json::to_string(&config).expect("config serializes");
    let mut hasher = Hasher::new();
    hasher.tag("config");
    hasher.bytes(canonical.as_bytes());
    Ok((config, hasher.finish()))
}

/// Applies one `section.key=value` override to the configuration tree. The
/// value is parsed as a TOML literal (so numbers, booleans, and arrays work)
/// and falls back to a string.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set expects section.key=value, got '{spec}'")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!(
            "--set key must name a section and a field, got '{path}'"
        )));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| config_err(format!("'{key}' does not name a table")))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| config_err(format!("'{path}' does not name a table entry")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

// ---------------------------------------------------------------------------
// Manifests and output files
// ---------------------------------------------------------------------------

/// Provenance block written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    /// Hash of the merged configuration; every CSV repeats it in a comment.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub physics: PhysicsConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol_hash: Option<String>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl RunManifest {
    fn new(command: &str, config_hash: &str, physics: &PhysicsConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seeds: Vec::new(),
            physics: physics.clone(),
            protocol_hash: None,
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
            sensitivity: None,
            details: None,
        }
    }

    fn write(mut self, out_dir: &Path, started: Instant) -> Result<PathBuf, CliError> {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        let path = out_dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(run_err)?;
        Ok(path)
    }
}

/// Writes a CSV whose first line ties it to the run manifest.
fn write_csv(
    path: &Path,
    config_hash: &str,
    comments: &[String],
    header: &[String],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut text = format!("# manifest: {config_hash}\n");
    for comment in comments {
        text.push_str("# ");
        text.push_str(comment);
        text.push('\n');
    }
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| run_err(format!("cannot write {}: {e}", path.display())))
}

fn fmt(value: f64) -> String {
    format!("{value}")
}

// ---------------------------------------------------------------------------
// Protocol resolution
// ---------------------------------------------------------------------------

/// A protocol ready to run, with the solver resolution and comb it was
/// declared for.
pub struct ResolvedProtocol {
    pub control: ControlProtocol,
    pub settings: SolverSettings,
    pub n_max: usize,
    pub q: f64,
    pub steps_per_segment: usize,
    pub hash: String,
}

/// Content hash of a runtime protocol plus the solver context.
pub fn protocol_hash(
    protocol: &ControlProtocol,
    n_max: usize,
    q: f64,
    steps_per_segment: usize,
) -> String {
    let mut h = Hasher::new();
    h.tag("protocol");
    h.u64(protocol.segment_amplitudes.len() as u64);
    for &a in &protocol.segment_amplitudes {
        h.f64(a);
    }
    h.f64(protocol.omega_s_over_omega_r);
    h.u64(n_max as u64);
    h.f64(q);
    h.u64(steps_per_segment as u64);
    h.finish()
}

/// Picks the protocol for a command: the `--protocol` flag wins, then
/// `[protocol] file`, then inline `[protocol] segment_amplitudes`.
fn resolve_protocol(
    flag: Option<&Path>,
    config: &AppConfig,
) -> Result<ResolvedProtocol, CliError> {
    if let Some(path) = flag.or(config.protocol.file.as_deref()) {
        let file = ProtocolFile::load(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let control = file.control_protocol().map_err(config_err)?;
        let steps = file.steps_per_segment().map_err(config_err)?;
        let q = file.q_list[0];
        let hash = protocol_hash(&control, file.n_max, q, steps);
        Ok(ResolvedProtocol {
            control,
            settings: SolverSettings::with_steps(steps),
            n_max: file.n_max,
            q,
            steps_per_segment: steps,
            hash,
        })
    } else if !config.protocol.segment_amplitudes.is_empty() {
        let omega = config
            .protocol
            .omega_s_over_omega_r
            .unwrap_or(DEFAULT_OMEGA_S_OVER_OMEGA_R);
        let control = ControlProtocol::new(config.protocol.segment_amplitudes.clone(), omega)
            .map_err(config_err)?;
        let physics = &config.physics;
        let hash = protocol_hash(
            &control,
            physics.n_max,
            physics.q,
            physics.steps_per_segment,
        );
        Ok(ResolvedProtocol {
            control,
            settings: SolverSettings::with_steps(physics.steps_per_segment),
            n_max: physics.n_max,
            q: physics.q,
            steps_per_segment: physics.steps_per_segment,
            hash,
        })
    } else {
        Err(config_err(
            "no protocol given: pass --protocol FILE or set [protocol] file/segment_amplitudes",
        ))
    }
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "shaken-lattice",
    version,
    about = "Design and analyze decorrelated sensing protocols for a shaken optical lattice"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration value, e.g. --set physics.n_max=12.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (default: out/<command>).
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for grid construction; defaults to all cores, or the
    /// SHAKEN_LATTICE_WORKERS environment variable.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Likelihood-grid cache directory; defaults to the SHAKEN_LATTICE_CACHE
    /// environment variable, with caching off when neither is set.
    #[arg(long, global = true, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Propagate a protocol and write momentum, band, position, and Fisher
    /// time series.
    Simulate {
        /// Protocol file; falls back to the [protocol] config section.
        #[arg(long, value_name = "FILE")]
        protocol: Option<PathBuf>,
        /// Record every STRIDE integrator steps.
        #[arg(long, default_value_t = 16)]
        stride: usize,
        /// Momentum width (recoil momenta) used to render position densities.
        #[arg(long, default_value_t = 0.35)]
        sigma_p: f64,
        /// Position samples per density frame.
        #[arg(long, default_value_t = 128)]
        position_points: usize,
        /// Bands in the band-occupation trace.
        #[arg(long, default_value_t = 8)]
        bands: usize,
        /// Compare the produced CSVs byte for byte against stored copies.
        #[arg(long, value_name = "DIR")]
        check_golden: Option<PathBuf>,
        /// Store the produced CSVs as the new golden copies.
        #[arg(long, value_name = "DIR")]
        write_golden: Option<PathBuf>,
    },
    /// Train a protocol designer; writes the best protocol, reward history,
    /// and network checkpoints.
    Train,
    /// Simulate measurements of a protocol and write Bayesian posterior
    /// snapshots, moments, and maximum-likelihood estimates.
    Bayes {
        /// Protocol file; falls back to the [protocol] config section.
        #[arg(long, value_name = "FILE")]
        protocol: Option<PathBuf>,
    },
    /// Map Jensen-Shannon divergences over the parameter grid.
    Jsd {
        /// Protocol file; falls back to the [protocol] config section.
        #[arg(long, value_name = "FILE")]
        protocol: Option<PathBuf>,
        /// Fit the divergence curvature at the reference point and compare
        /// it with the Fisher information.
        #[arg(long)]
        curvature: bool,
        /// Profile the usable range along the slice axis.
        #[arg(long)]
        range: bool,
    },
    /// Band structure of the static lattice across the Brillouin zone.
    Bands {
        /// Lattice depth, recoil energies (default: physics.depth_er).
        #[arg(long, value_name = "ER")]
        depth_er: Option<f64>,
        /// Lattice phase offset, radians.
        #[arg(long, default_value_t = 0.0)]
        phase: f64,
        /// Quasimomentum samples across [-1, 1).
        #[arg(long, default_value_t = 101)]
        q_count: usize,
        /// Number of bands to emit.
        #[arg(long, default_value_t = 8)]
        bands: usize,
    },
    /// Run fast self-checks and report a pass/fail table; any failure makes
    /// the exit code nonzero.
    Verify {
        /// Protocol file to validate (default: a built-in reference).
        #[arg(long, value_name = "FILE")]
        protocol: Option<PathBuf>,
        /// Multiply the integrator step by this factor before checking;
        /// large factors must make the convergence check fail.
        #[arg(long, default_value_t = 1.0)]
        dt_scale: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Train => "train",
            Command::Bayes { .. } => "bayes",
            Command::Jsd { .. } => "jsd",
            Command::Bands { .. } => "bands",
            Command::Verify { .. } => "verify",
        }
    }
}

/// Entry point used by the binary. Returns the process exit code.
pub fn run() -> i32 {
    run_with(std::env::args_os())
}

/// Same as [`run`] with explicit arguments, for tests.
pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn effective_workers(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("SHAKEN_LATTICE_WORKERS")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .filter(|&n| n > 0)
    .unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn effective_cache(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os("SHAKEN_LATTICE_CACHE").map(PathBuf::from))
}

/// Builds the global worker pool once; later calls keep the first size.
fn init_workers(workers: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global();
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let (config, config_hash) = load_config(cli.config.as_deref(), &cli.overrides)?;
    let out_dir = cli
        .out_dir
        .unwrap_or_else(|| PathBuf::from("out").join(cli.command.name()));
    fs::create_dir_all(&out_dir)
        .map_err(|e| run_err(format!("cannot create {}: {e}", out_dir.display())))?;
    let cache_dir = effective_cache(cli.cache_dir);

    match cli.command {
        Command::Simulate {
            ref protocol,
            stride,
            sigma_p,
            position_points,
            bands,
            ref check_golden,
            ref write_golden,
        } => cmd_simulate(
            &config,
            &config_hash,
            protocol.as_deref(),
            stride,
            sigma_p,
            position_points,
            bands,
            check_golden.as_deref(),
            write_golden.as_deref(),
            &out_dir,
            started,
        ),
        Command::Train => cmd_train(&config, &config_hash, &out_dir, started),
        Command::Bayes { ref protocol } => {
            init_workers(effective_workers(cli.workers));
            cmd_bayes(
                &config,
                &config_hash,
                protocol.as_deref(),
                cache_dir.as_deref(),
                &out_dir,
                started,
            )
        }
        Command::Jsd {
            ref protocol,
            curvature,
            range,
        } => {
            init_workers(effective_workers(cli.workers));
            cmd_jsd(
                &config,
                &config_hash,
                protocol.as_deref(),
                curvature,
                range,
                cache_dir.as_deref(),
                &out_dir,
                started,
            )
        }
        Command::Bands {
            depth_er,
            phase,
            q_count,
            bands,
        } => cmd_bands(
            &config,
            &config_hash,
            depth_er,
            phase,
            q_count,
            bands,
            &out_dir,
            started,
        ),
        Command::Verify {
            ref protocol,
            dt_scale,
        } => cmd_verify(&config, protocol.as_deref(), dt_scale),
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config: &AppConfig,
    config_hash: &str,
    protocol_flag: Option<&Path>,
    stride: usize,
    sigma_p: f64,
    position_points: usize,
    bands: usize,
    check_golden: Option<&Path>,
    write_golden: Option<&Path>,
    out_dir: &Path,
    started: Instant,
) -> Result<(), CliError> {
    let physics = &config.physics;
    let scales = physics.scales()?;
    let resolved = resolve_protocol(protocol_flag, config)?;
    let point = physics.point();
    let basis = build_basis(resolved.n_max, resolved.q).map_err(config_err)?;
    let comb_n_max = basis.n_max as i64;
    let bands = bands.min(basis.dim());
    let psi0 = ground_state(physics.depth_er, &basis, 0.0).map_err(run_err)?;
    let initial = AugmentedState::fresh(psi0, basis).map_err(run_err)?;

    let mut momentum_rows: Vec<Vec<String>> = Vec::new();
    let mut band_rows: Vec<Vec<String>> = Vec::new();
    let mut fisher_rows: Vec<Vec<String>> = Vec::new();
    let mut position_rows: Vec<Vec<String>> = Vec::new();
    let mut position_axis: Vec<f64> = Vec::new();
    let mut observer_error: Option<String> = None;

    let outcome = propagate_observed(
        &initial,
        &resolved.control,
        &point,
        &scales,
        &resolved.settings,
        stride,
        |state, _| {
            if observer_error.is_some() {
                return;
            }
            let tau = state.tau;
            let t_si = scales.seconds_from_tau(tau);
            let phi = resolved
                .control
                .value_at_tau(tau.min(resolved.control.total_tau()))
                .unwrap_or(0.0);
            let mut row = vec![fmt(tau), fmt(t_si), fmt(phi)];
            row.extend(momentum_distribution(&state.psi).iter().map(|&p| fmt(p)));
            momentum_rows.push(row);

            match bloch_diagonalize(physics.depth_er, &state.basis, phi) {
                Ok(bloch) => {
                    let occupations = band_occupations(&state.psi, &bloch);
                    let mut row = vec![fmt(tau), fmt(t_si), fmt(phi)];
                    row.extend(occupations.iter().take(bands).map(|&p| fmt(p)));
                    band_rows.push(row);
                }
                Err(e) => observer_error = Some(e.to_string()),
            }

            let density = position_density(&state.psi, &state.basis, sigma_p, position_points);
            if position_axis.is_empty() {
                position_axis = density.x_kl.clone();
            }
            let mut row = vec![fmt(tau), fmt(t_si)];
            row.extend(density.density.iter().map(|&d| fmt(d)));
            position_rows.push(row);

            let matrices = fisher_matrices(state, PROBABILITY_FLOOR);
            fisher_rows.push(vec![
                fmt(tau),
                fmt(t_si),
                fmt(matrices.cfim[(0, 0)]),
                fmt(matrices.cfim[(0, 1)]),
                fmt(matrices.cfim[(1, 1)]),
                fmt(matrices.qfim[(0, 0)]),
                fmt(matrices.qfim[(1, 1)]),
            ]);
        },
    )
    .map_err(run_err)?;
    if let Some(message) = observer_error {
        return Err(run_err(message));
    }

    let comments = vec![
        format!("protocol: {}", resolved.hash),
        format!(
            "point: a = {} g, depth = {} recoil energies",
            physics.a_over_g, physics.depth_er
        ),
        "momentum of comb tooth n is (2n + q) recoil momenta".to_string(),
    ];
    let mut momentum_header = vec!["tau".to_string(), "t_si".to_string(), "phi_rad".to_string()];
    momentum_header.extend((-comb_n_max..=comb_n_max).map(|n| format!("pop_{n}")));
    let mut band_header = vec!["tau".to_string(), "t_si".to_string(), "phi_rad".to_string()];
    band_header.extend((0..bands).map(|b| format!("band_{b}")));
    let mut position_header = vec!["tau".to_string(), "t_si".to_string()];
    position_header.extend(position_axis.iter().map(|&x| format!("x_{x}")));
    let fisher_header = [
        "tau", "t_si", "I_aa", "I_aV", "I_VV", "Q_aa", "Q_VV",
    ]
    .map(str::to_string)
    .to_vec();

    let files = [
        ("momentum.csv", momentum_header, momentum_rows),
        ("bands.csv", band_header, band_rows),
        ("position.csv", position_header, position_rows),
        ("fisher.csv", fisher_header, fisher_rows),
    ];
    let mut outputs = Vec::new();
    for (name, header, rows) in &files {
        let path = out_dir.join(name);
        write_csv(&path, config_hash, &comments, header, rows)?;
        outputs.push(name.to_string());
    }

    let matrices = fisher_matrices(&outcome.state, PROBABILITY_FLOOR);
    let reference = crate::freespace::designer_mzi_reference(&scales, resolved.control.total_tau());
    let sensitivity = match sensitivity_report(&matrices, reference) {
        Ok(report) => Some(report),
        Err(e) => {
            eprintln!("note: sensitivity summary unavailable: {e}");
            None
        }
    };

    if let Some(dir) = write_golden {
        fs::create_dir_all(dir).map_err(run_err)?;
        for (name, _, _) in &files {
            fs::copy(out_dir.join(name), dir.join(name)).map_err(run_err)?;
        }
        println!("golden copies written to {}", dir.display());
    }
    if let Some(dir) = check_golden {
        for (name, _, _) in &files {
            let produced = fs::read(out_dir.join(name)).map_err(run_err)?;
            let golden_path = dir.join(name);
            let stored = fs::read(&golden_path)
                .map_err(|e| run_err(format!("golden {}: {e}", golden_path.display())))?;
            if produced != stored {
                return Err(run_err(format!(
                    "output {name} differs from golden copy {}",
                    golden_path.display()
                )));
            }
        }
        println!("golden comparison passed for {} files", files.len());
    }

    let mut manifest = RunManifest::new("simulate", config_hash, physics);
    manifest.protocol_hash = Some(resolved.hash.clone());
    manifest.outputs = outputs;
    manifest.sensitivity = sensitivity;
    manifest.details = Some(serde_json::json!({
        "final_norm_drift": outcome.diagnostics.final_norm_drift,
        "max_boundary_occupation": outcome.diagnostics.max_boundary_occupation,
        "steps": outcome.diagnostics.steps_taken,
        "stride": stride,
    }));
    let path = manifest.write(out_dir, started)?;
    println!(
        "simulate: {} samples over {} segments, outputs in {}",
        momentum_rows_len(out_dir)?,
        resolved.control.segments(),
        path.parent().unwrap_or(out_dir).display()
    );
    Ok(())
}

/// Number of data rows in the momentum CSV, for the closing status line.
fn momentum_rows_len(out_dir: &Path) -> Result<usize, CliError> {
    let text = fs::read_to_string(out_dir.join("momentum.csv")).map_err(run_err)?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
        .saturating_sub(1))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(
    config: &AppConfig,
    config_hash: &str,
    out_dir: &Path,
    started: Instant,
) -> Result<(), CliError> {
    let physics = &config.physics;
    let scales = physics.scales()?;
    let env = config.designer.env(physics);
    let hyper = config.designer.hyper();

    let run = train(&env, &hyper, &scales).map_err(run_err)?;

    let mut file = ProtocolFile::from_protocol(
        &run.best_protocol,
        env.n_max,
        vec![env.q],
        env.steps_per_segment,
    );
    file.metadata.insert(
        "best_reward".to_string(),
        serde_json::json!(run.best_reward),
    );
    file.metadata.insert(
        "best_episode".to_string(),
        serde_json::json!(run.best_episode),
    );
    file.metadata
        .insert("config_hash".to_string(), serde_json::json!(config_hash));
    file.metadata.insert(
        "reward_kind".to_string(),
        serde_json::to_value(env.reward).expect("reward kind serializes"),
    );
    let protocol_path = out_dir.join("best_protocol.json");
    file.save(&protocol_path).map_err(run_err)?;

    let history_rows: Vec<Vec<String>> = run
        .history
        .iter()
        .map(|r| {
            vec![
                r.episode.to_string(),
                fmt(r.reward),
                fmt(r.epsilon),
                r.loss.map(fmt).unwrap_or_default(),
                (r.rejected as u8).to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("history.csv"),
        config_hash,
        &[format!("seed: {}", hyper.seed)],
        &["episode", "reward", "epsilon", "loss", "rejected"]
            .map(str::to_string)
            .to_vec(),
        &history_rows,
    )?;

    run.q_net
        .save_checkpoint(&out_dir.join("q_net.json"))
        .map_err(run_err)?;
    run.target_net
        .save_checkpoint(&out_dir.join("target_net.json"))
        .map_err(run_err)?;

    let mut manifest = RunManifest::new("train", config_hash, physics);
    manifest.seeds = vec![hyper.seed];
    manifest.protocol_hash = Some(protocol_hash(
        &run.best_protocol,
        env.n_max,
        env.q,
        env.steps_per_segment,
    ));
    manifest.outputs = vec![
        "best_protocol.json".into(),
        "history.csv".into(),
        "q_net.json".into(),
        "target_net.json".into(),
    ];
    manifest.details = Some(serde_json::json!({
        "best_reward": run.best_reward,
        "best_episode": run.best_episode,
        "episodes": run.history.len(),
        "discarded_episodes": run.discarded_episodes,
        "env": env,
        "hyperparameters": hyper,
    }));
    manifest.write(out_dir, started)?;
    println!(
        "train: best reward {} at episode {} ({} episodes, {} discarded), outputs in {}",
        run.best_reward,
        run.best_episode,
        run.history.len(),
        run.discarded_episodes.len(),
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bayes
// ---------------------------------------------------------------------------

fn build_grid(
    config: &AppConfig,
    resolved: &ResolvedProtocol,
    cache_dir: Option<&Path>,
) -> Result<LikelihoodGrid, CliError> {
    let spec = config.bayes.grid_spec()?;
    let build = GridBuildConfig {
        n_max: resolved.n_max,
        q: resolved.q,
        steps_per_segment: resolved.steps_per_segment,
        prep_depth_er: config.physics.depth_er,
    };
    let scales = config.physics.scales()?;
    build_likelihood_grid(&resolved.control, &spec, &build, &scales, cache_dir).map_err(run_err)
}

fn cmd_bayes(
    config: &AppConfig,
    config_hash: &str,
    protocol_flag: Option<&Path>,
    cache_dir: Option<&Path>,
    out_dir: &Path,
    started: Instant,
) -> Result<(), CliError> {
    let bayes = &config.bayes;
    let mut snapshots: Vec<usize> = bayes.snapshots.clone();
    snapshots.sort_unstable();
    snapshots.dedup();
    if snapshots.iter().any(|&n| n > bayes.shots) {
        return Err(config_err(format!(
            "snapshot sizes {snapshots:?} exceed shots = {}",
            bayes.shots
        )));
    }
    if bayes.seeds.is_empty() {
        return Err(config_err("bayes.seeds must not be empty"));
    }

    let resolved = resolve_protocol(protocol_flag, config)?;
    let grid = build_grid(config, &resolved, cache_dir)?;
    let truth = bayes.truth();
    grid.locate(&truth)
        .map_err(|e| config_err(format!("truth must sit on the grid: {e}")))?;

    let comments = |seed: Option<u64>, n: Option<usize>| -> Vec<String> {
        let mut c = vec![
            format!("protocol: {}", resolved.hash),
            format!("grid: {}", grid.meta.content_hash),
            format!(
                "truth: a = {} g, depth = {} recoil energies",
                bayes.truth_a_over_g, bayes.truth_depth_er
            ),
        ];
        if let Some(seed) = seed {
            c.push(format!("seed: {seed}"));
        }
        if let Some(n) = n {
            c.push(format!("measurements: {n}"));
        }
        c
    };

    let posterior_header = [
        "a_over_g", "depth_er", "a_si", "v_si", "density",
    ]
    .map(str::to_string)
    .to_vec();
    let mut moment_rows: Vec<Vec<String>> = Vec::new();
    let mut outputs = Vec::new();

    for &seed in &bayes.seeds {
        let record = if bayes.shots > 0 {
            Some(sample_record(&grid, &truth, bayes.shots, seed).map_err(run_err)?)
        } else {
            None
        };
        let prior = PosteriorGrid::flat(&grid);
        for &n in &snapshots {
            let posterior = if n == 0 {
                prior.clone()
            } else {
                let record = record.as_ref().expect("shots > 0 when snapshots > 0");
                let prefix = MeasurementRecord {
                    outcomes: record.outcomes[..n].to_vec(),
                    truth: record.truth,
                    seed: record.seed,
                };
                update_posterior(&prior, &prefix, &grid).map_err(run_err)?
            };
            let weights = posterior.weights();
            let rows: Vec<Vec<String>> = (0..grid.a_count())
                .flat_map(|i| {
                    let weights = &weights;
                    let grid = &grid;
                    (0..grid.v_count()).map(move |j| {
                        vec![
                            fmt(grid.a_over_g(i)),
                            fmt(grid.depth_er(j)),
                            fmt(grid.a_axis[i]),
                            fmt(grid.v_axis[j]),
                            fmt(weights[i * grid.v_count() + j]),
                        ]
                    })
                })
                .collect();
            let name = format!("posterior_seed{seed}_n{n}.csv");
            write_csv(
                &out_dir.join(&name),
                config_hash,
                &comments(Some(seed), Some(n)),
                &posterior_header,
                &rows,
            )?;
            outputs.push(name);

            let moments = posterior_moments(&posterior);
            let estimate = mle(&posterior);
            moment_rows.push(vec![
                seed.to_string(),
                n.to_string(),
                fmt(moments.mean_a_over_g),
                fmt(moments.mean_depth_er),
                fmt(moments.covariance[(0, 0)]),
                fmt(moments.covariance[(0, 1)]),
                fmt(moments.covariance[(1, 1)]),
                fmt(estimate.a_over_g),
                fmt(estimate.depth_er),
            ]);
        }
    }

    write_csv(
        &out_dir.join("moments.csv"),
        config_hash,
        &comments(None, None),
        &[
            "seed",
            "n",
            "mean_a_over_g",
            "mean_depth_er",
            "cov_aa",
            "cov_av",
            "cov_vv",
            "mle_a_over_g",
            "mle_depth_er",
        ]
        .map(str::to_string)
        .to_vec(),
        &moment_rows,
    )?;
    outputs.push("moments.csv".into());

    let mut manifest = RunManifest::new("bayes", config_hash, &config.physics);
    manifest.seeds = bayes.seeds.clone();
    manifest.protocol_hash = Some(resolved.hash.clone());
    manifest.outputs = outputs;
    manifest.details = Some(serde_json::json!({
        "grid_hash": grid.meta.content_hash,
        "truth": { "a_over_g": bayes.truth_a_over_g, "depth_er": bayes.truth_depth_er },
        "shots": bayes.shots,
        "snapshots": snapshots,
    }));
    manifest.write(out_dir, started)?;
    println!(
        "bayes: {} seeds, {} snapshots each, outputs in {}",
        bayes.seeds.len(),
        snapshots.len(),
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// jsd
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn cmd_jsd(
    config: &AppConfig,
    config_hash: &str,
    protocol_flag: Option<&Path>,
    with_curvature: bool,
    with_range: bool,
    cache_dir: Option<&Path>,
    out_dir: &Path,
    started: Instant,
) -> Result<(), CliError> {
    let resolved = resolve_protocol(protocol_flag, config)?;
    let grid = build_grid(config, &resolved, cache_dir)?;
    let spec = config.jsd.slice_spec();
    let map = jsd_map(&grid, &spec).map_err(run_err)?;

    let (slice_name, fixed) = match spec {
        SliceSpec::AccelPair { v_er } => (
            "accel-pair",
            format!("fixed depth: {v_er} recoil energies"),
        ),
        SliceSpec::DepthPair { a_over_g } => ("depth-pair", format!("fixed accel: {a_over_g} g")),
        SliceSpec::Joint { reference } => (
            "joint",
            format!(
                "reference: a = {} g, depth = {} recoil energies",
                reference.a_over_g, reference.depth_er
            ),
        ),
    };
    let comments = vec![
        format!("slice: {slice_name}"),
        fixed,
        format!("protocol: {}", resolved.hash),
        format!("grid: {}", grid.meta.content_hash),
        "divergences in bits".to_string(),
    ];
    let rows: Vec<Vec<String>> = (0..map.x_axis.len())
        .flat_map(|i| {
            let map = &map;
            (0..map.y_axis.len()).map(move |j| {
                vec![
                    fmt(map.x_axis[i]),
                    fmt(map.y_axis[j]),
                    fmt(map.value(i, j)),
                ]
            })
        })
        .collect();
    write_csv(
        &out_dir.join("jsd_map.csv"),
        config_hash,
        &comments,
        &["x", "y", "jsd_bits"].map(str::to_string).to_vec(),
        &rows,
    )?;
    let mut outputs = vec!["jsd_map.csv".to_string()];
    let mut details = serde_json::json!({
        "grid_hash": grid.meta.content_hash,
        "slice": slice_name,
    });

    if with_curvature {
        let reference = config.jsd.reference();
        let report = curvature_check(&grid, &reference).map_err(run_err)?;
        println!(
            "curvature-implied information at reference: I_aa = {}, I_aV = {}, I_VV = {} (rms residual {})",
            report.cfim_estimate[(0, 0)],
            report.cfim_estimate[(0, 1)],
            report.cfim_estimate[(1, 1)],
            report.rms_residual
        );
        details["curvature"] = serde_json::json!({
            "cfim_estimate": [
                [report.cfim_estimate[(0, 0)], report.cfim_estimate[(0, 1)]],
                [report.cfim_estimate[(1, 0)], report.cfim_estimate[(1, 1)]],
            ],
            "gradient": report.gradient,
            "rms_residual": report.rms_residual,
        });
    }

    if with_range {
        let (axis, reference_coordinate) = match spec {
            SliceSpec::DepthPair { a_over_g } => (
                ProfileAxis::Depth { a_over_g },
                config.jsd.ref_v_er,
            ),
            _ => (
                ProfileAxis::Accel {
                    v_er: config.jsd.v_er,
                },
                config.jsd.ref_a_over_g,
            ),
        };
        let estimate = effective_range(&grid, axis, reference_coordinate, &RangeOptions::default())
            .map_err(run_err)?;
        let mut range_comments = comments.clone();
        range_comments.push(format!(
            "reference coordinate: {reference_coordinate} (local info {})",
            estimate.reference_info
        ));
        let fmt_boundary =
            |b: Option<f64>| b.map_or_else(|| "none".to_string(), |v| format!("{v}"));
        range_comments.push(format!(
            "boundaries: low {}, high {}, threshold fraction {}",
            fmt_boundary(estimate.boundary_low),
            fmt_boundary(estimate.boundary_high),
            estimate.threshold_fraction
        ));
        if let Some(wrap) = estimate.wrap_constant_over_g {
            range_comments.push(format!("free-fall phase-wrap period: {wrap} g"));
        }
        let range_rows: Vec<Vec<String>> = estimate
            .coordinates
            .iter()
            .zip(&estimate.local_info)
            .zip(&estimate.envelope)
            .map(|((&c, &info), &env)| vec![fmt(c), fmt(info), fmt(env)])
            .collect();
        write_csv(
            &out_dir.join("range.csv"),
            config_hash,
            &range_comments,
            &["coordinate", "local_info", "envelope"]
                .map(str::to_string)
                .to_vec(),
            &range_rows,
        )?;
        outputs.push("range.csv".into());
        details["range"] = serde_json::to_value(&estimate).expect("range serializes");
    }

    let mut manifest = RunManifest::new("jsd", config_hash, &config.physics);
    manifest.protocol_hash = Some(resolved.hash.clone());
    manifest.outputs = outputs;
    manifest.details = Some(details);
    manifest.write(out_dir, started)?;
    println!(
        "jsd: {} by {} map written to {}",
        map.x_axis.len(),
        map.y_axis.len(),
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bands
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn cmd_bands(
    config: &AppConfig,
    config_hash: &str,
    depth_er: Option<f64>,
    phase: f64,
    q_count: usize,
    bands: usize,
    out_dir: &Path,
    started: Instant,
) -> Result<(), CliError> {
    if q_count == 0 || bands == 0 {
        return Err(config_err("q_count and bands must be positive"));
    }
    let physics = &config.physics;
    let depth = depth_er.unwrap_or(physics.depth_er);
    let bands = bands.min(2 * physics.n_max + 1);

    let mut rows = Vec::with_capacity(q_count);
    for i in 0..q_count {
        let q = -1.0 + 2.0 * i as f64 / q_count as f64;
        let basis = build_basis(physics.n_max, q).map_err(config_err)?;
        let bloch = bloch_diagonalize(depth, &basis, phase).map_err(run_err)?;
        let mut row = vec![fmt(q)];
        row.extend(bloch.energies.iter().take(bands).map(|&e| fmt(e)));
        rows.push(row);
    }

    let mut header = vec!["q".to_string()];
    header.extend((0..bands).map(|b| format!("e_{b}")));
    write_csv(
        &out_dir.join("bands.csv"),
        config_hash,
        &[
            format!("depth: {depth} recoil energies, phase: {phase} rad"),
            "energies in recoil units".to_string(),
        ],
        &header,
        &rows,
    )?;

    let mut manifest = RunManifest::new("bands", config_hash, physics);
    manifest.outputs = vec!["bands.csv".into()];
    manifest.details = Some(serde_json::json!({
        "depth_er": depth,
        "phase": phase,
        "q_count": q_count,
        "bands": bands,
    }));
    manifest.write(out_dir, started)?;
    println!(
        "bands: {bands} bands at {q_count} quasimomenta written to {}",
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct Check {
    name: &'static str,
    outcome: Result<String, String>,
}

fn check(name: &'static str, outcome: Result<String, String>) -> Check {
    Check { name, outcome }
}

fn random_protocol(seed: u64, segments: usize, max_amplitude: f64) -> ControlProtocol {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let amplitudes = (0..segments)
        .map(|_| rng.random_range(0.0..max_amplitude))
        .collect();
    ControlProtocol::new(amplitudes, DEFAULT_OMEGA_S_OVER_OMEGA_R).expect("non-empty protocol")
}

fn check_free_space(scales: &PhysicalScales) -> Result<String, String> {
    let scenario = FreeSpaceScenario {
        comb_order: 1,
        a_over_g: 0.05,
        total_tau: 3.0 * std::f64::consts::PI / DEFAULT_OMEGA_S_OVER_OMEGA_R,
    };
    let basis = build_basis(scenario.comb_order, 0.0).map_err(|e| e.to_string())?;
    let mut psi = StateVector::zeros(basis.dim());
    let amp = num_complex::Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    psi.amplitudes[basis.index_of(scenario.comb_order as i64).unwrap()] = amp;
    psi.amplitudes[basis.index_of(-(scenario.comb_order as i64)).unwrap()] = amp;
    let initial = AugmentedState::fresh(psi, basis).map_err(|e| e.to_string())?;
    let protocol = ControlProtocol::idle(3);
    let outcome = propagate_augmented(
        &initial,
        &protocol,
        &scenario.point(),
        scales,
        &SolverSettings::with_steps(1024),
    )
    .map_err(|e| e.to_string())?;
    let numeric = qfim(&outcome.state)[(0, 0)];
    let analytic = analytic_accel_qfim(&scenario, scales);
    let relative = (numeric - analytic).abs() / analytic;
    if relative < 1e-8 {
        Ok(format!("QFIM rel err {relative:.2e}"))
    } else {
        Err(format!(
            "QFIM {numeric} vs closed form {analytic} (rel {relative:.2e})"
        ))
    }
}

fn check_derivatives(scales: &PhysicalScales) -> Result<String, String> {
    let protocol = random_protocol(7, 4, std::f64::consts::PI / 2.0);
    let point = EstimationPoint::new(0.01, 10.0);
    let settings = SolverSettings::with_steps(256);
    let basis = build_basis(6, 0.0).map_err(|e| e.to_string())?;
    let psi0 = ground_state(point.depth_er, &basis, 0.0).map_err(|e| e.to_string())?;
    let initial = AugmentedState::fresh(psi0, basis).map_err(|e| e.to_string())?;

    let center = propagate_augmented(&initial, &protocol, &point, scales, &settings)
        .map_err(|e| e.to_string())?
        .state;
    let da = 1e-5;
    let mut worst: f64 = 0.0;
    for (shift, analytic) in [(da, &center.dpsi_da)] {
        let plus_point = EstimationPoint::new(point.a_over_g + shift, point.depth_er);
        let minus_point = EstimationPoint::new(point.a_over_g - shift, point.depth_er);
        let plus = propagate_augmented(&initial, &protocol, &plus_point, scales, &settings)
            .map_err(|e| e.to_string())?
            .state
            .psi;
        let minus = propagate_augmented(&initial, &protocol, &minus_point, scales, &settings)
            .map_err(|e| e.to_string())?
            .state
            .psi;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..plus.dim() {
            let fd = (plus.amplitudes[i] - minus.amplitudes[i]) / (2.0 * shift);
            num += (fd - analytic.amplitudes[i]).norm_sqr();
            den += analytic.amplitudes[i].norm_sqr();
        }
        worst = worst.max((num / den.max(f64::MIN_POSITIVE)).sqrt());
    }
    if worst < 1e-4 {
        Ok(format!("max rel L2 err {worst:.2e}"))
    } else {
        Err(format!("finite differences disagree: rel {worst:.2e}"))
    }
}

fn check_information_order(scales: &PhysicalScales) -> Result<String, String> {
    let point = EstimationPoint::new(0.0, 10.0);
    let settings = SolverSettings::with_steps(256);
    let basis = build_basis(6, 0.0).map_err(|e| e.to_string())?;
    let psi0 = ground_state(point.depth_er, &basis, 0.0).map_err(|e| e.to_string())?;
    let initial = AugmentedState::fresh(psi0, basis).map_err(|e| e.to_string())?;
    let mut worst = f64::INFINITY;
    for seed in 100..105 {
        let protocol = random_protocol(seed, 4, 1.1 * std::f64::consts::PI);
        let state = propagate_augmented(&initial, &protocol, &point, scales, &settings)
            .map_err(|e| e.to_string())?
            .state;
        let gap = qfim(&state) - cfim(&state, PROBABILITY_FLOOR);
        worst = worst.min(min_eigenvalue_2x2(&gap));
    }
    if worst >= -1e-8 {
        Ok(format!("min eigenvalue of QFIM - CFIM: {worst:.2e}"))
    } else {
        Err(format!(
            "classical information exceeded the quantum bound: min eig {worst:.2e}"
        ))
    }
}

fn check_curvature(config: &AppConfig, scales: &PhysicalScales) -> Result<String, String> {
    let protocol = random_protocol(11, 4, std::f64::consts::PI / 2.0);
    let spec = GridSpec::new(-3e-3, 3e-3, 7, 10.0 - 0.03, 10.0 + 0.03, 7).map_err(|e| e.to_string())?;
    let build = GridBuildConfig {
        n_max: 6,
        q: config.physics.q,
        steps_per_segment: 128,
        prep_depth_er: config.physics.depth_er,
    };
    let grid = build_likelihood_grid(&protocol, &spec, &build, scales, None)
        .map_err(|e| e.to_string())?;
    let reference = EstimationPoint::new(0.0, 10.0);
    let report = curvature_check(&grid, &reference).map_err(|e| e.to_string())?;

    let basis = build_basis(build.n_max, build.q).map_err(|e| e.to_string())?;
    let psi0 = ground_state(reference.depth_er, &basis, 0.0).map_err(|e| e.to_string())?;
    let initial = AugmentedState::fresh(psi0, basis).map_err(|e| e.to_string())?;
    let state = propagate_augmented(
        &initial,
        &protocol,
        &reference,
        scales,
        &SolverSettings::with_steps(build.steps_per_segment),
    )
    .map_err(|e| e.to_string())?
    .state;
    let direct = cfim(&state, PROBABILITY_FLOOR);
    let relative = (report.cfim_estimate[(0, 0)] - direct[(0, 0)]).abs() / direct[(0, 0)];
    if relative < 0.15 {
        Ok(format!("I_aa from divergence within {relative:.1e}"))
    } else {
        Err(format!(
            "divergence curvature {} vs Fisher information {} (rel {relative:.2e})",
            report.cfim_estimate[(0, 0)],
            direct[(0, 0)]
        ))
    }
}

fn check_norm_conservation(
    file: &ProtocolFile,
    dt_scale: f64,
    scales: &PhysicalScales,
) -> Result<String, String> {
    let protocol = file.control_protocol().map_err(|e| e.to_string())?;
    let declared = file.steps_per_segment().map_err(|e| e.to_string())?;
    let steps = ((declared as f64 / dt_scale).round() as usize).max(1);
    let settings = SolverSettings {
        steps_per_segment: steps,
        norm_tolerance: f64::INFINITY,
        ..SolverSettings::default()
    };
    let basis = build_basis(file.n_max, file.q_list[0]).map_err(|e| e.to_string())?;
    let psi0 = ground_state(10.0, &basis, 0.0).map_err(|e| e.to_string())?;
    let initial = AugmentedState::fresh(psi0, basis).map_err(|e| e.to_string())?;
    let point = EstimationPoint::new(0.0, 10.0);
    let outcome = propagate_augmented(&initial, &protocol, &point, scales, &settings)
        .map_err(|e| e.to_string())?;
    let drift = outcome.diagnostics.final_norm_drift;
    if drift < 1e-8 {
        Ok(format!("norm drift {drift:.2e} at {steps} steps/segment"))
    } else {
        Err(format!("norm drift {drift:.2e} exceeds 1e-8"))
    }
}

fn check_convergence(
    file: &ProtocolFile,
    dt_scale: f64,
    scales: &PhysicalScales,
) -> Result<String, String> {
    let protocol = file.control_protocol().map_err(|e| e.to_string())?;
    let declared = file.steps_per_segment().map_err(|e| e.to_string())?;
    let steps = ((declared as f64 / dt_scale).round() as usize).max(1);
    let basis = build_basis(file.n_max, file.q_list[0]).map_err(|e| e.to_string())?;
    let psi0 = ground_state(10.0, &basis, 0.0).map_err(|e| e.to_string())?;
    let initial = AugmentedState::fresh(psi0, basis).map_err(|e| e.to_string())?;
    let point = EstimationPoint::new(0.0, 10.0);
    let run = |steps: usize| -> Result<nalgebra::Matrix2<f64>, String> {
        let settings = SolverSettings {
            steps_per_segment: steps,
            norm_tolerance: f64::INFINITY,
            truncation_abort: f64::INFINITY,
            ..SolverSettings::default()
        };
        Ok(qfim(
            &propagate_augmented(&initial, &protocol, &point, scales, &settings)
                .map_err(|e| e.to_string())?
                .state,
        ))
    };
    let coarse = run(steps)?;
    let fine = run(steps * 2)?;
    if coarse.iter().chain(fine.iter()).any(|v| !v.is_finite()) {
        return Err(format!(
            "QFIM is not finite at {steps} steps/segment; integrator diverged"
        ));
    }
    let scale = fine[(0, 0)].abs().max(fine[(1, 1)].abs()).max(1e-12);
    let mut worst: f64 = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            worst = worst.max((coarse[(r, c)] - fine[(r, c)]).abs() / scale);
        }
    }
    if worst < 1e-3 {
        Ok(format!("QFIM step-halving change {worst:.2e}"))
    } else {
        Err(format!(
            "QFIM changes by {worst:.2e} under step halving; step too coarse"
        ))
    }
}

fn check_protocol_round_trip(file: &ProtocolFile) -> Result<String, String> {
    let text = serde_json::to_string(file).map_err(|e| e.to_string())?;
    let reloaded: ProtocolFile = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    if reloaded == *file {
        Ok("byte-exact".to_string())
    } else {
        Err("serialization round trip altered the protocol".to_string())
    }
}

fn cmd_verify(
    config: &AppConfig,
    protocol_flag: Option<&Path>,
    dt_scale: f64,
) -> Result<(), CliError> {
    if !(dt_scale > 0.0) || !dt_scale.is_finite() {
        return Err(config_err(format!("dt_scale must be positive, got {dt_scale}")));
    }
    let scales = config.physics.scales()?;

    let mut checks: Vec<Check> = Vec::new();
    let file = match protocol_flag {
        Some(path) => match ProtocolFile::load(path) {
            Ok(file) => {
                checks.push(check("protocol file parses", Ok(format!("{}", path.display()))));
                Some(file)
            }
            Err(e) => {
                checks.push(check("protocol file parses", Err(e.to_string())));
                None
            }
        },
        None => {
            let file = crate::protocols::reference();
            checks.push(check(
                "protocol file parses",
                Ok("built-in reference".to_string()),
            ));
            Some(file)
        }
    };

    checks.push(check("free-space closed form", check_free_space(&scales)));
    checks.push(check(
        "parameter derivatives vs finite differences",
        check_derivatives(&scales),
    ));
    checks.push(check(
        "quantum information bounds classical",
        check_information_order(&scales),
    ));
    checks.push(check(
        "divergence curvature matches information",
        check_curvature(config, &scales),
    ));
    if let Some(file) = &file {
        checks.push(check(
            "protocol round trip",
            check_protocol_round_trip(file),
        ));
        checks.push(check(
            "norm conservation",
            check_norm_conservation(file, dt_scale, &scales),
        ));
        checks.push(check(
            "integrator convergence",
            check_convergence(file, dt_scale, &scales),
        ));
    }

    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut failures = 0;
    for c in &checks {
        match &c.outcome {
            Ok(detail) => println!("{:width$}  PASS  {detail}", c.name),
            Err(detail) => {
                failures += 1;
                println!("{:width$}  FAIL  {detail}", c.name);
            }
        }
    }
    println!(
        "verify: {} passed, {failures} failed",
        checks.len() - failures
    );
    if failures > 0 {
        Err(run_err(format!("{failures} verification check(s) failed")))
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_hash_is_stable_within_a_build() {
        let (_, h1) = load_config(None, &[]).unwrap();
        let (_, h2) = load_config(None, &[]).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 32);
    }

    #[test]
    fn overrides_change_values_and_the_hash() {
        let (base, base_hash) = load_config(None, &[]).unwrap();
        let (changed, changed_hash) = load_config(
            None,
            &[
                "physics.n_max=12".to_string(),
                "designer.reward=depth-marginal".to_string(),
                "bayes.seeds=[3, 4]".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(base.physics.n_max, 10);
        assert_eq!(changed.physics.n_max, 12);
        assert_eq!(changed.designer.reward, RewardKind::DepthMarginal);
        assert_eq!(changed.bayes.seeds, vec![3, 4]);
        assert_ne!(base_hash, changed_hash);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        assert!(matches!(
            load_config(None, &["nonsense".to_string()]),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            load_config(None, &["physics.not_a_field=1".to_string()]),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            load_config(None, &["physics.n_max=not_a_number".to_string()]),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn config_file_and_overrides_merge() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        fs::write(
            &path,
            "[physics]\nn_max = 7\ndepth_er = 9.5\n\n[bayes]\nshots = 50\n",
        )
        .unwrap();
        let (config, _) = load_config(
            Some(&path),
            &["physics.depth_er=10.5".to_string()],
        )
        .unwrap();
        assert_eq!(config.physics.n_max, 7);
        assert_eq!(config.physics.depth_er, 10.5);
        assert_eq!(config.bayes.shots, 50);
        assert_eq!(config.bayes.a_count, 101, "untouched fields keep defaults");
    }

    #[test]
    fn unknown_config_sections_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        fs::write(&path, "[nonsense]\nx = 1\n").unwrap();
        assert!(matches!(
            load_config(Some(&path), &[]),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn exit_codes_for_parse_and_config_problems() {
        // Unknown subcommand is a usage error.
        assert_eq!(run_with(["shaken-lattice", "frobnicate"]), 2);
        // Help is not an error.
        assert_eq!(run_with(["shaken-lattice", "--help"]), 0);
        // A missing protocol is a configuration error.
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert_eq!(
            run_with([
                "shaken-lattice",
                "simulate",
                "--out-dir",
                out.to_str().unwrap(),
            ]),
            2
        );
    }

    #[test]
    fn protocol_hash_tracks_content() {
        let a = ControlProtocol::new(vec![0.1, 0.2], 11.5).unwrap();
        let b = ControlProtocol::new(vec![0.1, 0.3], 11.5).unwrap();
        let ha = protocol_hash(&a, 10, 0.0, 256);
        let hb = protocol_hash(&b, 10, 0.0, 256);
        assert_ne!(ha, hb);
        assert_eq!(ha, protocol_hash(&a, 10, 0.0, 256));
        assert_ne!(ha, protocol_hash(&a, 10, 0.0, 512));
    }
}
