//! Grid-based Bayesian inference over acceleration and lattice depth.
//!
//! A [`LikelihoodGrid`] tabulates the momentum-outcome distribution produced
//! by one control protocol over a rectangle of candidate parameter values.
//! Simulated measurement records drawn from a grid point feed a log-space
//! posterior update, from which maximum-likelihood estimates and posterior
//! moments follow. Grids are expensive to build (one propagation per grid
//! point), so they can be cached on disk keyed by a content hash of
//! everything that determines them.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Matrix2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cli::Hasher;
use crate::dynamics::{
    momentum_distribution, propagate_wavefunction, ControlProtocol, DynamicsError,
    EstimationPoint, SolverSettings,
};
use crate::physcore::{build_basis, ground_state, PhysError, PhysicalScales, G_STANDARD};

/// Magic bytes opening a cached likelihood-grid file.
const CACHE_MAGIC: &[u8; 8] = b"LGRID\x01\r\n";

/// Errors from grid construction, sampling, and posterior updates.
#[derive(Debug, thiserror::Error)]
pub enum BayesError {
    #[error("axis needs at least one point")]
    EmptyAxis,
    #[error("axis bounds are reversed or not finite")]
    BadAxisBounds,
    #[error("a single-point axis needs equal bounds")]
    DegenerateAxis,
    #[error("propagation failed at grid point (a/g = {a_over_g}, V = {depth_er} E_R): {source}")]
    GridPropagation {
        a_over_g: f64,
        depth_er: f64,
        source: DynamicsError,
    },
    #[error("initial state preparation failed: {0}")]
    Preparation(#[from] PhysError),
    #[error("truth ({a_over_g} g, {depth_er} E_R) is not a grid point")]
    TruthOffGrid { a_over_g: f64, depth_er: f64 },
    #[error("record and grid shapes disagree")]
    ShapeMismatch,
    #[error("outcome index {0} exceeds the comb")]
    BadOutcome(usize),
    #[error("record is impossible at every grid point")]
    DegeneratePosterior,
    #[error("record must contain at least one outcome")]
    EmptyRecord,
    #[error("cache io: {0}")]
    Cache(#[from] std::io::Error),
    #[error("cache file malformed: {0}")]
    CacheFormat(String),
}

/// Rectangular parameter region in natural units, with uniform spacing.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridSpec {
    /// Lowest acceleration, in units of g.
    pub a_min_over_g: f64,
    /// Highest acceleration, in units of g.
    pub a_max_over_g: f64,
    /// Number of acceleration samples.
    pub a_count: usize,
    /// Lowest lattice depth, in recoil energies.
    pub v_min_er: f64,
    /// Highest lattice depth, in recoil energies.
    pub v_max_er: f64,
    /// Number of depth samples.
    pub v_count: usize,
}

impl GridSpec {
    pub fn new(
        a_min_over_g: f64,
        a_max_over_g: f64,
        a_count: usize,
        v_min_er: f64,
        v_max_er: f64,
        v_count: usize,
    ) -> Result<Self, BayesError> {
        let spec = Self {
            a_min_over_g,
            a_max_over_g,
            a_count,
            v_min_er,
            v_max_er,
            v_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), BayesError> {
        for (min, max, count) in [
            (self.a_min_over_g, self.a_max_over_g, self.a_count),
            (self.v_min_er, self.v_max_er, self.v_count),
        ] {
            if count == 0 {
                return Err(BayesError::EmptyAxis);
            }
            if !(min.is_finite() && max.is_finite()) || min > max {
                return Err(BayesError::BadAxisBounds);
            }
            if count == 1 && min != max {
                return Err(BayesError::DegenerateAxis);
            }
            if count > 1 && min == max {
                return Err(BayesError::DegenerateAxis);
            }
        }
        Ok(())
    }

    /// Acceleration samples in units of g.
    pub fn a_axis_over_g(&self) -> Vec<f64> {
        linspace(self.a_min_over_g, self.a_max_over_g, self.a_count)
    }

    /// Depth samples in recoil energies.
    pub fn v_axis_er(&self) -> Vec<f64> {
        linspace(self.v_min_er, self.v_max_er, self.v_count)
    }
}

impl Default for GridSpec {
    /// The survey region used throughout: a tenth of g on either side of
    /// zero and a twenty-percent window around a ten-recoil lattice.
    fn default() -> Self {
        Self {
            a_min_over_g: -0.1,
            a_max_over_g: 0.1,
            a_count: 101,
            v_min_er: 9.0,
            v_max_er: 11.0,
            v_count: 101,
        }
    }
}

fn linspace(min: f64, max: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![min];
    }
    let step = (max - min) / (count - 1) as f64;
    (0..count).map(|k| min + step * k as f64).collect()
}

/// Everything besides the protocol that shapes a likelihood grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridBuildConfig {
    /// Momentum comb truncation for the propagations.
    pub n_max: usize,
    /// Quasimomentum of the prepared atoms.
    pub q: f64,
    /// Integrator resolution.
    pub steps_per_segment: usize,
    /// Depth at which the initial ground state is prepared, recoil energies.
    /// Held fixed across the whole grid so the likelihood varies only
    /// through the dynamics, matching the augmented-state Fisher
    /// information, whose parameter derivatives start at zero.
    pub prep_depth_er: f64,
}

impl Default for GridBuildConfig {
    fn default() -> Self {
        Self {
            n_max: 10,
            q: 0.0,
            steps_per_segment: crate::dynamics::DEFAULT_STEPS_PER_SEGMENT,
            prep_depth_er: 10.0,
        }
    }
}

/// Descriptive header carried by every grid, sufficient to rebuild the
/// physical context it was computed in.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridMeta {
    /// Content hash of the protocol and build configuration.
    pub content_hash: String,
    /// Shaking amplitudes, radians per segment.
    pub segment_amplitudes: Vec<f64>,
    /// Drive frequency over the recoil frequency.
    pub omega_s_over_omega_r: f64,
    pub n_max: usize,
    pub q: f64,
    pub steps_per_segment: usize,
    /// Preparation depth of the initial ground state, recoil energies.
    pub prep_depth_er: f64,
    /// Atomic mass in unified atomic mass units.
    pub mass_amu: f64,
    /// Lattice laser wavelength in nanometers.
    pub wavelength_nm: f64,
    /// Protocol duration in recoil time units.
    pub total_tau: f64,
}

impl GridMeta {
    /// Unit system the grid was computed in.
    pub fn scales(&self) -> PhysicalScales {
        PhysicalScales::new(self.mass_amu, self.wavelength_nm)
            .expect("grid metadata carries valid scales")
    }
}

/// Outcome probabilities for one protocol over a parameter rectangle.
///
/// Axes are stored in SI units; the metadata block holds the conversion
/// factors, and the accessors [`LikelihoodGrid::a_over_g`] and
/// [`LikelihoodGrid::depth_er`] give the natural-unit coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LikelihoodGrid {
    /// Acceleration samples in meters per second squared.
    pub a_axis: Vec<f64>,
    /// Lattice depth samples in joules.
    pub v_axis: Vec<f64>,
    /// Momentum outcomes per grid point, `2*n_max + 1`.
    pub outcomes: usize,
    /// Row-major probabilities: `table[(i*v_len + j)*outcomes + n]`.
    pub table: Vec<f64>,
    pub meta: GridMeta,
}

impl LikelihoodGrid {
    pub fn a_count(&self) -> usize {
        self.a_axis.len()
    }

    pub fn v_count(&self) -> usize {
        self.v_axis.len()
    }

    /// Acceleration of column `i` in units of g.
    pub fn a_over_g(&self, i: usize) -> f64 {
        self.a_axis[i] / G_STANDARD
    }

    /// Depth of row `j` in recoil energies.
    pub fn depth_er(&self, j: usize) -> f64 {
        self.v_axis[j] / self.meta.scales().e_r
    }

    /// Outcome distribution at grid point `(i, j)`.
    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.v_count() + j) * self.outcomes;
        &self.table[start..start + self.outcomes]
    }

    /// Grid indices of an estimation point, if it lies on the grid.
    pub fn locate(&self, point: &EstimationPoint) -> Result<(usize, usize), BayesError> {
        let scales = self.meta.scales();
        let a_si = point.accel_si();
        let v_si = point.depth_si(&scales);
        let i = nearest_on_axis(&self.a_axis, a_si);
        let j = nearest_on_axis(&self.v_axis, v_si);
        match (i, j) {
            (Some(i), Some(j)) => Ok((i, j)),
            _ => Err(BayesError::TruthOffGrid {
                a_over_g: point.a_over_g,
                depth_er: point.depth_er,
            }),
        }
    }

    /// Parameter coordinates of grid point `(i, j)` in natural units.
    pub fn point(&self, i: usize, j: usize) -> EstimationPoint {
        EstimationPoint::new(self.a_over_g(i), self.depth_er(j))
    }
}

fn nearest_on_axis(axis: &[f64], value: f64) -> Option<usize> {
    let (index, nearest) = axis
        .iter()
        .enumerate()
        .min_by(|(_, x), (_, y)| (*x - value).abs().total_cmp(&(*y - value).abs()))?;
    let span = axis.last()? - axis.first()?;
    let tolerance = 1e-9 * span.abs().max(value.abs()).max(f64::MIN_POSITIVE);
    ((nearest - value).abs() <= tolerance).then_some(index)
}

/// Deterministic identity of a grid: protocol, region, and solver context.
fn grid_hash(protocol: &ControlProtocol, spec: &GridSpec, config: &GridBuildConfig,
             scales: &PhysicalScales) -> String {
    let mut h = Hasher::new();
    h.tag("likelihood-grid-v1");
    h.u64(protocol.segments() as u64);
    for &a in &protocol.segment_amplitudes {
        h.f64(a);
    }
    h.f64(protocol.omega_s_over_omega_r);
    h.f64(spec.a_min_over_g);
    h.f64(spec.a_max_over_g);
    h.u64(spec.a_count as u64);
    h.f64(spec.v_min_er);
    h.f64(spec.v_max_er);
    h.u64(spec.v_count as u64);
    h.u64(config.n_max as u64);
    h.f64(config.q);
    h.u64(config.steps_per_segment as u64);
    h.f64(config.prep_depth_er);
    h.f64(scales.mass);
    h.f64(scales.wavelength);
    h.finish()
}

/// Tabulates outcome probabilities for `protocol` over `spec`.
///
/// At each grid point the atoms start in the lattice ground state for that
/// point's depth and quasimomentum `config.q`, then evolve under the
/// protocol at that point's acceleration. Rows are normalized exactly.
/// With `cache_dir` set, a grid whose content hash matches an existing file
/// is read back instead of recomputed, and fresh grids are written through
/// atomically.
pub fn build_likelihood_grid(
    protocol: &ControlProtocol,
    spec: &GridSpec,
    config: &GridBuildConfig,
    scales: &PhysicalScales,
    cache_dir: Option<&Path>,
) -> Result<LikelihoodGrid, BayesError> {
    spec.validate()?;
    let hash = grid_hash(protocol, spec, config, scales);
    if let Some(dir) = cache_dir {
        let path = cache_path(dir, &hash);
        if path.exists() {
            return read_cache(&path, &hash);
        }
    }

    let a_over_g = spec.a_axis_over_g();
    let v_er = spec.v_axis_er();
    let basis = build_basis(config.n_max, config.q)?;
    let outcomes = basis.dim();
    let settings = SolverSettings::with_steps(config.steps_per_segment);

    let psi0 = ground_state(config.prep_depth_er, &basis, 0.0)?;
    let points: Vec<(usize, usize)> = (0..a_over_g.len())
        .flat_map(|i| (0..v_er.len()).map(move |j| (i, j)))
        .collect();
    let rows: Vec<Result<Vec<f64>, BayesError>> = points
        .par_iter()
        .map(|&(i, j)| {
            let point = EstimationPoint::new(a_over_g[i], v_er[j]);
            let (psi, _) = propagate_wavefunction(&psi0, &basis, protocol, &point, scales, &settings)
                .map_err(|source| BayesError::GridPropagation {
                    a_over_g: point.a_over_g,
                    depth_er: point.depth_er,
                    source,
                })?;
            let mut row = momentum_distribution(&psi);
            let total: f64 = row.iter().sum();
            for p in &mut row {
                *p /= total;
            }
            Ok(row)
        })
        .collect();

    let mut table = Vec::with_capacity(points.len() * outcomes);
    for row in rows {
        table.extend(row?);
    }

    let grid = LikelihoodGrid {
        a_axis: a_over_g.iter().map(|a| a * G_STANDARD).collect(),
        v_axis: v_er.iter().map(|v| v * scales.e_r).collect(),
        outcomes,
        table,
        meta: GridMeta {
            content_hash: hash.clone(),
            segment_amplitudes: protocol.segment_amplitudes.clone(),
            omega_s_over_omega_r: protocol.omega_s_over_omega_r,
            n_max: config.n_max,
            q: config.q,
            steps_per_segment: config.steps_per_segment,
            prep_depth_er: config.prep_depth_er,
            mass_amu: scales.mass / crate::physcore::AMU,
            wavelength_nm: scales.wavelength * 1e9,
            total_tau: protocol.total_tau(),
        },
    };

    if let Some(dir) = cache_dir {
        write_cache(dir, &hash, &grid)?;
    }
    Ok(grid)
}

fn cache_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("{hash}.lgrid"))
}

/// Cache layout: magic, little-endian u64 header length, JSON header,
/// then the probability table as little-endian f64 words.
fn write_cache(dir: &Path, hash: &str, grid: &LikelihoodGrid) -> Result<(), BayesError> {
    fs::create_dir_all(dir)?;
    let header = serde_json::json!({
        "a_axis": grid.a_axis,
        "v_axis": grid.v_axis,
        "outcomes": grid.outcomes,
        "meta": grid.meta,
    });
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let final_path = cache_path(dir, hash);
    let tmp_path = dir.join(format!(".{hash}.tmp"));
    {
        let mut f = fs::File::create(&tmp_path)?;
        f.write_all(CACHE_MAGIC)?;
        f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&header_bytes)?;
        for value in &grid.table {
            f.write_all(&value.to_le_bytes())?;
        }
        f.sync_all()?;
    }
    fs::rename(&tmp_path, &final_path)?;
    Ok(())
}

fn read_cache(path: &Path, expect_hash: &str) -> Result<LikelihoodGrid, BayesError> {
    let mut f = fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(BayesError::CacheFormat("bad magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 24 {
        return Err(BayesError::CacheFormat("oversized header".into()));
    }
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    #[derive(Deserialize)]
    struct Header {
        a_axis: Vec<f64>,
        v_axis: Vec<f64>,
        outcomes: usize,
        meta: GridMeta,
    }
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| BayesError::CacheFormat(e.to_string()))?;
    if header.meta.content_hash != expect_hash {
        return Err(BayesError::CacheFormat("content hash mismatch".into()));
    }
    let expected = header.a_axis.len() * header.v_axis.len() * header.outcomes;
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    if raw.len() != expected * 8 {
        return Err(BayesError::CacheFormat(format!(
            "table holds {} bytes, expected {}",
            raw.len(),
            expected * 8
        )));
    }
    let table = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(LikelihoodGrid {
        a_axis: header.a_axis,
        v_axis: header.v_axis,
        outcomes: header.outcomes,
        table,
        meta: header.meta,
    })
}

/// Simulated sequence of independent momentum measurements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementRecord {
    /// Comb indices, one per detected atom.
    pub outcomes: Vec<usize>,
    /// Parameters the record was drawn at.
    pub truth: EstimationPoint,
    /// Seed of the generator that produced it.
    pub seed: u64,
}

/// Draws `n` independent outcomes from the grid's distribution at `truth`.
///
/// The truth must be a grid point; values between samples are rejected
/// rather than interpolated.
pub fn sample_record(
    grid: &LikelihoodGrid,
    truth: &EstimationPoint,
    n: usize,
    seed: u64,
) -> Result<MeasurementRecord, BayesError> {
    if n == 0 {
        return Err(BayesError::EmptyRecord);
    }
    let (i, j) = grid.locate(truth)?;
    let row = grid.row(i, j);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u: f64 = rng.random();
        let mut chosen = row.len() - 1;
        for (idx, &p) in row.iter().enumerate() {
            if u < p {
                chosen = idx;
                break;
            }
            u -= p;
        }
        outcomes.push(chosen);
    }
    Ok(MeasurementRecord {
        outcomes,
        truth: *truth,
        seed,
    })
}

/// Log-density over the grid, normalized so the probabilities sum to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorGrid {
    /// Natural-log probability per grid point, `log_density[i*v_len + j]`.
    pub log_density: Vec<f64>,
    pub a_axis: Vec<f64>,
    pub v_axis: Vec<f64>,
    pub meta: GridMeta,
}

impl PosteriorGrid {
    /// Uniform prior over the grid's region.
    pub fn flat(grid: &LikelihoodGrid) -> Self {
        let cells = grid.a_count() * grid.v_count();
        Self {
            log_density: vec![-((cells as f64).ln()); cells],
            a_axis: grid.a_axis.clone(),
            v_axis: grid.v_axis.clone(),
            meta: grid.meta.clone(),
        }
    }

    fn a_count(&self) -> usize {
        self.a_axis.len()
    }

    fn v_count(&self) -> usize {
        self.v_axis.len()
    }

    /// Probability weights, exponentiated and renormalized.
    pub fn weights(&self) -> Vec<f64> {
        let peak = self
            .log_density
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = self
            .log_density
            .iter()
            .map(|&l| (l - peak).exp())
            .collect();
        let total: f64 = w.iter().sum();
        for x in &mut w {
            *x /= total;
        }
        w
    }
}

/// Multiplies the prior by the record's likelihood, in log space.
///
/// Outcome multiplicities are accumulated once, so records of any length
/// cost one pass over the grid. The result is renormalized; a record that
/// no grid point can produce is reported as degenerate rather than
/// returned as a grid of minus infinities.
pub fn update_posterior(
    prior: &PosteriorGrid,
    record: &MeasurementRecord,
    grid: &LikelihoodGrid,
) -> Result<PosteriorGrid, BayesError> {
    if prior.a_count() != grid.a_count()
        || prior.v_count() != grid.v_count()
        || prior.log_density.len() != grid.a_count() * grid.v_count()
    {
        return Err(BayesError::ShapeMismatch);
    }
    if record.outcomes.is_empty() {
        return Err(BayesError::EmptyRecord);
    }
    let mut counts = vec![0u64; grid.outcomes];
    for &outcome in &record.outcomes {
        *counts
            .get_mut(outcome)
            .ok_or(BayesError::BadOutcome(outcome))? += 1;
    }

    let mut log_density = prior.log_density.clone();
    for i in 0..grid.a_count() {
        for j in 0..grid.v_count() {
            let row = grid.row(i, j);
            let cell = &mut log_density[i * grid.v_count() + j];
            for (n, &count) in counts.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let p = row[n];
                if p > 0.0 {
                    *cell += count as f64 * p.ln();
                } else {
                    *cell = f64::NEG_INFINITY;
                    break;
                }
            }
        }
    }

    // Normalize by log-sum-exp so the densities stay representable for
    // records of a hundred thousand atoms.
    let peak = log_density
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return Err(BayesError::DegeneratePosterior);
    }
    let log_total = peak
        + log_density
            .iter()
            .map(|&l| (l - peak).exp())
            .sum::<f64>()
            .ln();
    for l in &mut log_density {
        *l -= log_total;
    }
    Ok(PosteriorGrid {
        log_density,
        a_axis: prior.a_axis.clone(),
        v_axis: prior.v_axis.clone(),
        meta: prior.meta.clone(),
    })
}

/// Grid argmax of the posterior, ties broken toward the smallest indices
/// (acceleration index first).
pub fn mle(posterior: &PosteriorGrid) -> EstimationPoint {
    let v_count = posterior.v_count();
    let mut best = (0usize, 0usize);
    let mut best_value = f64::NEG_INFINITY;
    for i in 0..posterior.a_count() {
        for j in 0..v_count {
            let value = posterior.log_density[i * v_count + j];
            if value > best_value {
                best_value = value;
                best = (i, j);
            }
        }
    }
    let scales = posterior.meta.scales();
    EstimationPoint::new(
        posterior.a_axis[best.0] / G_STANDARD,
        posterior.v_axis[best.1] / scales.e_r,
    )
}

/// First and second central moments of a posterior, in natural units.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorMoments {
    /// Mean acceleration in units of g.
    pub mean_a_over_g: f64,
    /// Mean depth in recoil energies.
    pub mean_depth_er: f64,
    /// Covariance of (a/g, V/E_R).
    pub covariance: Matrix2<f64>,
}

/// Grid-weighted mean and covariance over the two parameters.
pub fn posterior_moments(posterior: &PosteriorGrid) -> PosteriorMoments {
    let scales = posterior.meta.scales();
    let weights = posterior.weights();
    let v_count = posterior.v_count();
    let mut mean = [0.0f64; 2];
    for i in 0..posterior.a_count() {
        let a = posterior.a_axis[i] / G_STANDARD;
        for j in 0..v_count {
            let v = posterior.v_axis[j] / scales.e_r;
            let w = weights[i * v_count + j];
            mean[0] += w * a;
            mean[1] += w * v;
        }
    }
    let mut cov = Matrix2::zeros();
    for i in 0..posterior.a_count() {
        let da = posterior.a_axis[i] / G_STANDARD - mean[0];
        for j in 0..v_count {
            let dv = posterior.v_axis[j] / scales.e_r - mean[1];
            let w = weights[i * v_count + j];
            cov[(0, 0)] += w * da * da;
            cov[(0, 1)] += w * da * dv;
            cov[(1, 1)] += w * dv * dv;
        }
    }
    cov[(1, 0)] = cov[(0, 1)];
    PosteriorMoments {
        mean_a_over_g: mean[0],
        mean_depth_er: mean[1],
        covariance: cov,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physcore::AMU;

    fn toy_meta() -> GridMeta {
        GridMeta {
            content_hash: "deadbeef".into(),
            segment_amplitudes: vec![0.0],
            omega_s_over_omega_r: 11.5,
            n_max: 1,
            q: 0.0,
            steps_per_segment: 16,
            prep_depth_er: 10.0,
            mass_amu: 86.9,
            wavelength_nm: 1064.0,
            total_tau: 0.27,
        }
    }

    /// Hand-built grid with explicit rows, axes in natural units.
    fn toy_grid(a_over_g: &[f64], v_er: &[f64], rows: &[Vec<f64>]) -> LikelihoodGrid {
        let scales = PhysicalScales::new(86.9, 1064.0).unwrap();
        let outcomes = rows[0].len();
        let mut table = Vec::new();
        for row in rows {
            assert_eq!(row.len(), outcomes);
            table.extend_from_slice(row);
        }
        assert_eq!(rows.len(), a_over_g.len() * v_er.len());
        LikelihoodGrid {
            a_axis: a_over_g.iter().map(|a| a * G_STANDARD).collect(),
            v_axis: v_er.iter().map(|v| v * scales.e_r).collect(),
            outcomes,
            table,
            meta: toy_meta(),
        }
    }

    #[test]
    fn single_point_grid_is_one_propagation() {
        let scales = PhysicalScales::rubidium_87();
        let protocol = ControlProtocol::idle(2);
        let spec = GridSpec::new(0.0, 0.0, 1, 10.0, 10.0, 1).unwrap();
        let config = GridBuildConfig {
            n_max: 5,
            q: 0.0,
            steps_per_segment: 64,
            prep_depth_er: 10.0,
        };
        let grid = build_likelihood_grid(&protocol, &spec, &config, &scales, None).unwrap();
        assert_eq!(grid.a_count(), 1);
        assert_eq!(grid.v_count(), 1);
        let row = grid.row(0, 0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // The zero protocol leaves the ground state alone, so the outcome
        // distribution is the static ground-state comb distribution.
        let basis = build_basis(5, 0.0).unwrap();
        let psi0 = ground_state(10.0, &basis, 0.0).unwrap();
        let static_dist = momentum_distribution(&psi0);
        for (p, q) in row.iter().zip(&static_dist) {
            assert!((p - q).abs() < 1e-8, "{p} vs {q}");
        }
    }

    #[test]
    fn rows_are_normalized_across_the_grid() {
        let scales = PhysicalScales::rubidium_87();
        let protocol = ControlProtocol::new(vec![0.7, 1.1], 11.5).unwrap();
        let spec = GridSpec::new(-0.05, 0.05, 3, 9.5, 10.5, 2).unwrap();
        let config = GridBuildConfig {
            n_max: 6,
            q: 0.0,
            steps_per_segment: 128,
            prep_depth_er: 10.0,
        };
        let grid = build_likelihood_grid(&protocol, &spec, &config, &scales, None).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let total: f64 = grid.row(i, j).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cache_round_trip_is_bitwise() {
        let scales = PhysicalScales::rubidium_87();
        let protocol = ControlProtocol::new(vec![0.4, 0.9, 0.2], 11.5).unwrap();
        let spec = GridSpec::new(-0.02, 0.02, 2, 10.0, 10.4, 2).unwrap();
        let config = GridBuildConfig {
            n_max: 4,
            q: 0.0,
            steps_per_segment: 64,
            prep_depth_er: 10.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let first =
            build_likelihood_grid(&protocol, &spec, &config, &scales, Some(dir.path())).unwrap();
        let cached = cache_path(dir.path(), &first.meta.content_hash);
        assert!(cached.exists());
        let second =
            build_likelihood_grid(&protocol, &spec, &config, &scales, Some(dir.path())).unwrap();
        assert_eq!(first.table.len(), second.table.len());
        for (a, b) in first.table.iter().zip(&second.table) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(first.a_axis, second.a_axis);
        assert_eq!(first.meta, second.meta);
    }

    #[test]
    fn corrupted_cache_is_rejected() {
        let scales = PhysicalScales::rubidium_87();
        let protocol = ControlProtocol::idle(1);
        let spec = GridSpec::new(0.0, 0.0, 1, 10.0, 10.0, 1).unwrap();
        let config = GridBuildConfig {
            n_max: 5,
            q: 0.0,
            steps_per_segment: 32,
            prep_depth_er: 10.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let grid =
            build_likelihood_grid(&protocol, &spec, &config, &scales, Some(dir.path())).unwrap();
        let path = cache_path(dir.path(), &grid.meta.content_hash);
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes.truncate(last);
        fs::write(&path, &bytes).unwrap();
        let err = build_likelihood_grid(&protocol, &spec, &config, &scales, Some(dir.path()));
        assert!(matches!(err, Err(BayesError::CacheFormat(_))));
    }

    #[test]
    fn deterministic_record_and_degenerate_distribution() {
        let grid = toy_grid(&[0.0], &[10.0], &[vec![1.0, 0.0, 0.0]]);
        let truth = EstimationPoint::new(0.0, 10.0);
        let record = sample_record(&grid, &truth, 50, 9).unwrap();
        assert!(record.outcomes.iter().all(|&o| o == 0));
        let again = sample_record(&grid, &truth, 50, 9).unwrap();
        assert_eq!(record.outcomes, again.outcomes);
        let other = sample_record(&grid, &truth, 50, 10).unwrap();
        assert_eq!(other.outcomes, record.outcomes, "degenerate for any seed");
    }

    #[test]
    fn off_grid_truth_is_rejected() {
        let grid = toy_grid(&[0.0, 0.1], &[10.0], &[vec![0.5, 0.5], vec![0.4, 0.6]]);
        let err = sample_record(&grid, &EstimationPoint::new(0.05, 10.0), 10, 1);
        assert!(matches!(err, Err(BayesError::TruthOffGrid { .. })));
    }

    #[test]
    fn empirical_frequencies_match_probabilities() {
        let grid = toy_grid(&[0.0], &[10.0], &[vec![0.1, 0.2, 0.3, 0.4]]);
        let truth = EstimationPoint::new(0.0, 10.0);
        let n = 100_000usize;
        let record = sample_record(&grid, &truth, n, 123).unwrap();
        let mut counts = [0usize; 4];
        for &o in &record.outcomes {
            counts[o] += 1;
        }
        let expected = [0.1, 0.2, 0.3, 0.4].map(|p| p * n as f64);
        let statistic: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
            .sum();
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let p_value = 1.0 - ChiSquared::new(3.0).unwrap().cdf(statistic);
        assert!(p_value > 0.01, "chi-square p-value {p_value:.4}");
    }

    #[test]
    fn uninformative_outcomes_leave_the_prior_alone() {
        // Both grid points emit the same distribution, so no record can
        // distinguish them.
        let grid = toy_grid(
            &[0.0, 0.1],
            &[10.0],
            &[vec![0.3, 0.7], vec![0.3, 0.7]],
        );
        let prior = PosteriorGrid::flat(&grid);
        let record = sample_record(&grid, &EstimationPoint::new(0.0, 10.0), 200, 5).unwrap();
        let posterior = update_posterior(&prior, &record, &grid).unwrap();
        for (a, b) in posterior.log_density.iter().zip(&prior.log_density) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn incremental_updates_equal_batch() {
        let grid = toy_grid(
            &[0.0, 0.1],
            &[9.0, 11.0],
            &[
                vec![0.2, 0.8],
                vec![0.5, 0.5],
                vec![0.7, 0.3],
                vec![0.9, 0.1],
            ],
        );
        let truth = EstimationPoint::new(0.1, 11.0);
        let record = sample_record(&grid, &truth, 300, 77).unwrap();
        let prior = PosteriorGrid::flat(&grid);
        let batch = update_posterior(&prior, &record, &grid).unwrap();

        let (first, rest) = record.outcomes.split_at(120);
        let part1 = MeasurementRecord {
            outcomes: first.to_vec(),
            truth,
            seed: 77,
        };
        let part2 = MeasurementRecord {
            outcomes: rest.to_vec(),
            truth,
            seed: 77,
        };
        let mid = update_posterior(&prior, &part1, &grid).unwrap();
        let twice = update_posterior(&mid, &part2, &grid).unwrap();
        for (a, b) in batch.log_density.iter().zip(&twice.log_density) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_normalization_survives_huge_records() {
        let grid = toy_grid(
            &[0.0, 0.1],
            &[10.0],
            &[vec![0.2, 0.8], vec![0.8, 0.2]],
        );
        let record = sample_record(&grid, &EstimationPoint::new(0.0, 10.0), 100_000, 3).unwrap();
        let posterior =
            update_posterior(&PosteriorGrid::flat(&grid), &record, &grid).unwrap();
        let total: f64 = posterior.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn impossible_record_is_degenerate() {
        let grid = toy_grid(&[0.0, 0.1], &[10.0], &[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let record = MeasurementRecord {
            outcomes: vec![1],
            truth: EstimationPoint::new(0.0, 10.0),
            seed: 0,
        };
        let err = update_posterior(&PosteriorGrid::flat(&grid), &record, &grid);
        assert!(matches!(err, Err(BayesError::DegeneratePosterior)));
    }

    #[test]
    fn mle_tie_breaks_toward_low_indices() {
        let grid = toy_grid(
            &[0.0, 0.1],
            &[9.0, 11.0],
            &[
                vec![0.5, 0.5],
                vec![0.5, 0.5],
                vec![0.5, 0.5],
                vec![0.5, 0.5],
            ],
        );
        let flat = PosteriorGrid::flat(&grid);
        let estimate = mle(&flat);
        assert_eq!(estimate.a_over_g, 0.0);
        assert_eq!(estimate.depth_er, 9.0);
    }

    #[test]
    fn delta_posterior_has_zero_covariance() {
        let grid = toy_grid(
            &[0.0, 0.1],
            &[10.0],
            &[vec![0.5, 0.5], vec![0.5, 0.5]],
        );
        let mut posterior = PosteriorGrid::flat(&grid);
        posterior.log_density = vec![f64::NEG_INFINITY, 0.0];
        let m = posterior_moments(&posterior);
        assert!((m.mean_a_over_g - 0.1).abs() < 1e-12);
        assert!(m.covariance.norm() < 1e-18);
        let estimate = mle(&posterior);
        assert_eq!(estimate.a_over_g, 0.1);
    }

    #[test]
    fn moments_match_a_hand_posterior() {
        let grid = toy_grid(
            &[0.0, 0.2],
            &[10.0],
            &[vec![0.5, 0.5], vec![0.5, 0.5]],
        );
        let mut posterior = PosteriorGrid::flat(&grid);
        posterior.log_density = vec![(0.25f64).ln(), (0.75f64).ln()];
        let m = posterior_moments(&posterior);
        assert!((m.mean_a_over_g - 0.15).abs() < 1e-12);
        let var = 0.25 * (0.15f64).powi(2) + 0.75 * (0.05f64).powi(2);
        assert!((m.covariance[(0, 0)] - var).abs() < 1e-12);
        assert!(m.covariance[(0, 0)] >= 0.0);
        assert_eq!(m.covariance[(0, 1)], m.covariance[(1, 0)]);
    }

    #[test]
    fn grid_meta_scales_round_trip() {
        let meta = toy_meta();
        let scales = meta.scales();
        assert!((scales.mass / AMU - 86.9).abs() < 1e-12);
        assert!((scales.wavelength * 1e9 - 1064.0).abs() < 1e-9);
    }
}
