//! Information-theoretic distances between outcome distributions.
//!
//! The Jensen-Shannon divergence between the momentum distributions at two
//! parameter values measures how distinguishable those values are from a
//! single shot. Maps of the divergence over parameter slices expose the
//! global structure the Fisher information cannot see: aliasing valleys
//! where distant parameters mimic each other, and the finite range over
//! which a protocol stays sensitive. Near a reference point the divergence
//! is quadratic with curvature set by the classical Fisher information,
//! which gives an independent check on the estimation pipeline.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::bayes::LikelihoodGrid;
use crate::dynamics::EstimationPoint;
use crate::physcore::G_STANDARD;

/// Natural log of 2: converts between bits and nats.
const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, thiserror::Error)]
pub enum DivergenceError {
    #[error("distributions have different support sizes ({0} vs {1})")]
    SupportMismatch(usize, usize),
    #[error("slice coordinate {value} is not a grid line of the {axis} axis")]
    SliceOffGrid { axis: &'static str, value: f64 },
    #[error("reference point is not on the grid")]
    ReferenceOffGrid,
    #[error("reference is too close to the grid edge for a {stencil}x{stencil} stencil")]
    ReferenceOnBoundary { stencil: usize },
    #[error("axis needs at least {need} points, grid has {have}")]
    AxisTooShort { need: usize, have: usize },
    #[error("quadratic fit is singular")]
    SingularFit,
}

/// Kullback-Leibler divergence from `q` to `p` in bits.
///
/// Terms with `p[n] = 0` contribute nothing. A support point where `q`
/// vanishes but `p` does not makes the divergence infinite, and the
/// function returns exactly that rather than masking it; callers that
/// need finiteness should compare against a mixture as [`jsd`] does.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64, DivergenceError> {
    if p.len() != q.len() {
        return Err(DivergenceError::SupportMismatch(p.len(), q.len()));
    }
    let mut total = 0.0;
    for (&pn, &qn) in p.iter().zip(q) {
        if pn == 0.0 {
            continue;
        }
        if qn == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pn * (pn / qn).log2();
    }
    Ok(total)
}

/// Jensen-Shannon divergence in bits: symmetric, bounded by one bit, and
/// finite for every pair of distributions on a shared support.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, DivergenceError> {
    if p.len() != q.len() {
        return Err(DivergenceError::SupportMismatch(p.len(), q.len()));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(&a, &b)| 0.5 * (a + b)).collect();
    Ok(0.5 * (kl(p, &m)? + kl(q, &m)?))
}

/// Which pair of parameters a divergence map varies.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub enum SliceSpec {
    /// Both axes are acceleration, compared at a fixed lattice depth:
    /// `values[(i, i')] = jsd(P(a_i, v), P(a_i', v))`.
    AccelPair { v_er: f64 },
    /// Both axes are lattice depth, compared at a fixed acceleration.
    DepthPair { a_over_g: f64 },
    /// Acceleration versus depth, each grid point compared against one
    /// reference point.
    Joint { reference: EstimationPoint },
}

/// Jensen-Shannon divergence over a two-parameter slice, in bits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsdMap {
    /// Coordinates of the first axis, natural units per `spec`.
    pub x_axis: Vec<f64>,
    /// Coordinates of the second axis, natural units per `spec`.
    pub y_axis: Vec<f64>,
    /// Row-major divergences: `values[i * y_axis.len() + j]`.
    pub values: Vec<f64>,
    /// What the axes mean.
    pub spec: SliceSpec,
}

impl JsdMap {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.y_axis.len() + j]
    }
}

fn require_on_axis(
    axis: &[f64],
    value_si: f64,
    label: &'static str,
    reported: f64,
) -> Result<usize, DivergenceError> {
    let best = axis
        .iter()
        .enumerate()
        .min_by(|(_, x), (_, y)| (*x - value_si).abs().total_cmp(&(*y - value_si).abs()));
    let span = axis.last().copied().unwrap_or(0.0) - axis.first().copied().unwrap_or(0.0);
    match best {
        Some((i, x)) if (x - value_si).abs() <= 1e-9 * span.abs().max(value_si.abs()) => Ok(i),
        _ => Err(DivergenceError::SliceOffGrid {
            axis: label,
            value: reported,
        }),
    }
}

/// Computes the divergence map for one slice of a likelihood grid.
///
/// Pair slices produce symmetric maps with an exactly zero diagonal; the
/// joint slice compares every grid point against the reference point's
/// distribution.
pub fn jsd_map(grid: &LikelihoodGrid, spec: &SliceSpec) -> Result<JsdMap, DivergenceError> {
    let scales = grid.meta.scales();
    match *spec {
        SliceSpec::AccelPair { v_er } => {
            let j = require_on_axis(&grid.v_axis, v_er * scales.e_r, "depth", v_er)?;
            let axis: Vec<f64> = (0..grid.a_count()).map(|i| grid.a_over_g(i)).collect();
            let n = axis.len();
            let mut values = vec![0.0; n * n];
            for i0 in 0..n {
                for i1 in (i0 + 1)..n {
                    let d = jsd(grid.row(i0, j), grid.row(i1, j))?;
                    values[i0 * n + i1] = d;
                    values[i1 * n + i0] = d;
                }
            }
            Ok(JsdMap {
                x_axis: axis.clone(),
                y_axis: axis,
                values,
                spec: *spec,
            })
        }
        SliceSpec::DepthPair { a_over_g } => {
            let i = require_on_axis(&grid.a_axis, a_over_g * G_STANDARD, "acceleration", a_over_g)?;
            let axis: Vec<f64> = (0..grid.v_count()).map(|j| grid.depth_er(j)).collect();
            let n = axis.len();
            let mut values = vec![0.0; n * n];
            for j0 in 0..n {
                for j1 in (j0 + 1)..n {
                    let d = jsd(grid.row(i, j0), grid.row(i, j1))?;
                    values[j0 * n + j1] = d;
                    values[j1 * n + j0] = d;
                }
            }
            Ok(JsdMap {
                x_axis: axis.clone(),
                y_axis: axis,
                values,
                spec: *spec,
            })
        }
        SliceSpec::Joint { reference } => {
            let (ri, rj) = grid
                .locate(&reference)
                .map_err(|_| DivergenceError::ReferenceOffGrid)?;
            let reference_row = grid.row(ri, rj).to_vec();
            let x_axis: Vec<f64> = (0..grid.a_count()).map(|i| grid.a_over_g(i)).collect();
            let y_axis: Vec<f64> = (0..grid.v_count()).map(|j| grid.depth_er(j)).collect();
            let mut values = vec![0.0; x_axis.len() * y_axis.len()];
            for i in 0..x_axis.len() {
                for j in 0..y_axis.len() {
                    values[i * y_axis.len() + j] = jsd(grid.row(i, j), &reference_row)?;
                }
            }
            Ok(JsdMap {
                x_axis,
                y_axis,
                values,
                spec: *spec,
            })
        }
    }
}

/// Least-squares fit of `f(x, y) = b0 + b1 x + b2 y + b3 x^2 + b4 x y + b5 y^2`
/// over a rectangular stencil of samples.
///
/// `values[(i, j)]` is sampled at `x = (i - cx) * hx`, `y = (j - cy) * hy`
/// with the stencil center `(cx, cy)` at the middle. The fit runs in
/// step-normalized coordinates for conditioning and rescales afterwards.
/// Returns the six coefficients and the root-mean-square residual.
pub fn fit_quadratic_surface(
    values: &[f64],
    rows: usize,
    cols: usize,
    hx: f64,
    hy: f64,
) -> Result<([f64; 6], f64), DivergenceError> {
    assert_eq!(values.len(), rows * cols, "stencil shape mismatch");
    assert!(rows >= 3 && cols >= 3, "stencil too small for a quadratic");
    let cx = (rows - 1) as f64 / 2.0;
    let cy = (cols - 1) as f64 / 2.0;
    let mut design = DMatrix::zeros(rows * cols, 6);
    let mut rhs = DVector::zeros(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let x = i as f64 - cx;
            let y = j as f64 - cy;
            let r = i * cols + j;
            design[(r, 0)] = 1.0;
            design[(r, 1)] = x;
            design[(r, 2)] = y;
            design[(r, 3)] = x * x;
            design[(r, 4)] = x * y;
            design[(r, 5)] = y * y;
            rhs[r] = values[r];
        }
    }
    let svd = design.clone().svd(true, true);
    let beta = svd
        .solve(&rhs, 1e-12)
        .map_err(|_| DivergenceError::SingularFit)?;
    let fitted = &design * &beta;
    let rms = ((&rhs - &fitted).norm_squared() / (rows * cols) as f64).sqrt();
    let scaled = [
        beta[0],
        beta[1] / hx,
        beta[2] / hy,
        beta[3] / (hx * hx),
        beta[4] / (hx * hy),
        beta[5] / (hy * hy),
    ];
    Ok((scaled, rms))
}

/// Result of fitting the divergence surface around a reference point.
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureReport {
    /// Eight times the fitted Hessian of the divergence in nats; equals the
    /// classical Fisher information matrix when the quadratic regime holds.
    pub cfim_estimate: Matrix2<f64>,
    /// Fitted gradient in nats per (g, recoil energy); zero up to fit noise
    /// because the divergence has an absolute minimum at the reference.
    pub gradient: [f64; 2],
    /// Root-mean-square fit residual in nats.
    pub rms_residual: f64,
}

/// Fits the local quadratic of the divergence around `reference` and
/// converts its curvature into a Fisher-information estimate.
///
/// The stencil spans five grid steps per axis centered on the reference,
/// so the reference must sit at least two cells from every edge.
pub fn curvature_check(
    grid: &LikelihoodGrid,
    reference: &EstimationPoint,
) -> Result<CurvatureReport, DivergenceError> {
    const STENCIL: usize = 5;
    let half = STENCIL / 2;
    let (ri, rj) = grid
        .locate(reference)
        .map_err(|_| DivergenceError::ReferenceOffGrid)?;
    if grid.a_count() < STENCIL || grid.v_count() < STENCIL {
        return Err(DivergenceError::AxisTooShort {
            need: STENCIL,
            have: grid.a_count().min(grid.v_count()),
        });
    }
    if ri < half || ri + half >= grid.a_count() || rj < half || rj + half >= grid.v_count() {
        return Err(DivergenceError::ReferenceOnBoundary { stencil: STENCIL });
    }

    let reference_row = grid.row(ri, rj).to_vec();
    let mut values = vec![0.0; STENCIL * STENCIL];
    for di in 0..STENCIL {
        for dj in 0..STENCIL {
            let i = ri + di - half;
            let j = rj + dj - half;
            // The information identity lives in nats; the fit converts once
            // here instead of rescaling every coefficient later.
            values[di * STENCIL + dj] = jsd(grid.row(i, j), &reference_row)? * LN_2;
        }
    }
    let ha = grid.a_over_g(ri + 1) - grid.a_over_g(ri);
    let hv = grid.depth_er(rj + 1) - grid.depth_er(rj);
    let (beta, rms) = fit_quadratic_surface(&values, STENCIL, STENCIL, ha, hv)?;
    let cfim_estimate = Matrix2::new(
        8.0 * beta[3],
        4.0 * beta[4],
        4.0 * beta[4],
        8.0 * beta[5],
    );
    Ok(CurvatureReport {
        cfim_estimate,
        gradient: [beta[1], beta[2]],
        rms_residual: rms,
    })
}

/// Which one-dimensional slice a sensitivity profile runs along.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum ProfileAxis {
    /// Sweep acceleration at a fixed depth.
    Accel { v_er: f64 },
    /// Sweep depth at a fixed acceleration.
    Depth { a_over_g: f64 },
}

/// Local-information profile along one parameter axis with an estimate of
/// the protocol's usable range.
#[derive(Debug, Clone, Serialize)]
pub struct RangeEstimate {
    /// Axis coordinate of each profile sample, natural units.
    pub coordinates: Vec<f64>,
    /// Local Fisher information per coordinate, from adjacent-point
    /// divergence curvature.
    pub local_info: Vec<f64>,
    /// Running-maximum envelope of the profile.
    pub envelope: Vec<f64>,
    /// Envelope value at the reference coordinate.
    pub reference_info: f64,
    /// First coordinate below the reference where the envelope drops under
    /// the threshold, if it ever does.
    pub boundary_low: Option<f64>,
    /// Same, above the reference.
    pub boundary_high: Option<f64>,
    /// Fraction of the reference envelope that counts as decayed.
    pub threshold_fraction: f64,
    /// Acceleration period of the free-fall phase wrap, in units of g;
    /// absent for depth profiles where no such constant applies.
    pub wrap_constant_over_g: Option<f64>,
}

/// Tuning for [`effective_range`].
#[derive(Debug, Clone, Copy)]
pub struct RangeOptions {
    /// Envelope fraction below which sensitivity counts as lost.
    pub threshold_fraction: f64,
    /// Width of the running-maximum window, in profile samples.
    pub envelope_window: usize,
}

impl Default for RangeOptions {
    fn default() -> Self {
        Self {
            threshold_fraction: 0.5,
            envelope_window: 7,
        }
    }
}

/// Profiles the local information along one axis and reports where the
/// protocol stops distinguishing neighboring parameter values.
///
/// At each interior grid point the divergence between the two flanking
/// distributions gives the local information through the small-step
/// quadratic identity. The oscillating profile is smoothed into a
/// running-maximum envelope, and the range boundary is the first
/// coordinate on each side of `reference` where the envelope falls below
/// the configured fraction of its reference value.
pub fn effective_range(
    grid: &LikelihoodGrid,
    axis: ProfileAxis,
    reference: f64,
    options: &RangeOptions,
) -> Result<RangeEstimate, DivergenceError> {
    let scales = grid.meta.scales();
    let (coordinates, rows): (Vec<f64>, Vec<&[f64]>) = match axis {
        ProfileAxis::Accel { v_er } => {
            let j = require_on_axis(&grid.v_axis, v_er * scales.e_r, "depth", v_er)?;
            (
                (0..grid.a_count()).map(|i| grid.a_over_g(i)).collect(),
                (0..grid.a_count()).map(|i| grid.row(i, j)).collect(),
            )
        }
        ProfileAxis::Depth { a_over_g } => {
            let i = require_on_axis(&grid.a_axis, a_over_g * G_STANDARD, "acceleration", a_over_g)?;
            (
                (0..grid.v_count()).map(|j| grid.depth_er(j)).collect(),
                (0..grid.v_count()).map(|j| grid.row(i, j)).collect(),
            )
        }
    };
    if coordinates.len() < 3 {
        return Err(DivergenceError::AxisTooShort {
            need: 3,
            have: coordinates.len(),
        });
    }

    let mut interior = Vec::with_capacity(coordinates.len() - 2);
    let mut local_info = Vec::with_capacity(coordinates.len() - 2);
    for k in 1..coordinates.len() - 1 {
        let h = 0.5 * (coordinates[k + 1] - coordinates[k - 1]);
        let d_nats = jsd(rows[k - 1], rows[k + 1])? * LN_2;
        interior.push(coordinates[k]);
        local_info.push(8.0 * d_nats / (2.0 * h).powi(2));
    }

    let window = options.envelope_window.max(1);
    let envelope: Vec<f64> = (0..local_info.len())
        .map(|k| {
            let lo = k.saturating_sub(window / 2);
            let hi = (k + window / 2 + 1).min(local_info.len());
            local_info[lo..hi].iter().copied().fold(0.0, f64::max)
        })
        .collect();

    let ref_idx = interior
        .iter()
        .enumerate()
        .min_by(|(_, x), (_, y)| (*x - reference).abs().total_cmp(&(*y - reference).abs()))
        .map(|(k, _)| k)
        .expect("profile is non-empty");
    let reference_info = envelope[ref_idx];
    let cutoff = options.threshold_fraction * reference_info;

    let mut boundary_high = None;
    for k in ref_idx..envelope.len() {
        if envelope[k] < cutoff {
            boundary_high = Some(interior[k]);
            break;
        }
    }
    let mut boundary_low = None;
    for k in (0..=ref_idx).rev() {
        if envelope[k] < cutoff {
            boundary_low = Some(interior[k]);
            break;
        }
    }

    let wrap_constant_over_g = match axis {
        ProfileAxis::Accel { .. } => {
            let t_si = grid.meta.total_tau / scales.omega_r;
            Some(2.0 * std::f64::consts::PI / (scales.k_l * t_si * t_si) / G_STANDARD)
        }
        ProfileAxis::Depth { .. } => None,
    };

    Ok(RangeEstimate {
        coordinates: interior,
        local_info,
        envelope,
        reference_info,
        boundary_low,
        boundary_high,
        threshold_fraction: options.threshold_fraction,
        wrap_constant_over_g,
    })
}
