//! Time evolution of the shaken-lattice system together with its parameter
//! derivatives.
//!
//! The lab-frame Hamiltonian is `p^2/2m - (V_L/2) cos(2 k_L x + phi(t)) + m a x`
//! with a piecewise-sinusoidal shaking phase `phi(t)`. Working in the
//! accelerated (boosted) frame replaces the gradient term by a time-dependent
//! momentum shift, so on the comb the Hamiltonian stays tridiagonal:
//!
//! * diagonal: `(p_n - m a t)^2 / 2m`
//! * off-diagonal: `-(V_L/4) e^{+i phi}` up one comb state, conjugate down.
//!
//! Estimating `(a, V_L)` from momentum counts requires the state derivatives
//! with respect to both parameters. These obey Schrodinger equations driven by
//! the parameter derivative of the Hamiltonian acting on the state, and are
//! integrated jointly with the state by a classic fixed-step fourth-order
//! Runge-Kutta scheme; within every stage the source term uses that stage's
//! wavefunction.
//!
//! Internally: times in `1/omega_R`, depths in `E_R`, accelerations in units
//! of standard gravity, momenta in `hbar k_L`.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physcore::{
    BlochDecomposition, MomentumBasis, PhysicalScales, QuasimomentumGrid, StateVector,
};

/// Default drive frequency in units of the recoil frequency. Chosen between
/// the 2nd/3rd and 3rd/4th band gaps of a 10 recoil lattice so the shaking
/// drives transitions among the lowest bands.
pub const DEFAULT_OMEGA_S_OVER_OMEGA_R: f64 = 11.5;

/// Default number of RK4 steps per drive segment.
pub const DEFAULT_STEPS_PER_SEGMENT: usize = 256;

/// Errors from propagation and protocol handling.
#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("protocol has no segments")]
    EmptyProtocol,
    #[error("drive frequency ratio must be positive and finite, got {0}")]
    InvalidDriveFrequency(f64),
    #[error("time {tau} outside protocol span [0, {total}] (recoil units)")]
    TimeOutOfRange { tau: f64, total: f64 },
    #[error("requested span [{start}, {end}] does not align with the step grid")]
    MisalignedSpan { start: f64, end: f64 },
    #[error("norm drifted by {drift:.3e} at tau = {tau:.6} (limit {limit:.1e}); reduce dt")]
    NormDrift { tau: f64, drift: f64, limit: f64 },
    #[error(
        "boundary comb occupation {occupation:.3e} at tau = {tau:.6} exceeds {limit:.1e}; \
         enlarge n_max"
    )]
    TruncationAbort { tau: f64, occupation: f64, limit: f64 },
    #[error("state dimension {state} does not match basis dimension {basis}")]
    BasisMismatch { state: usize, basis: usize },
    #[error("steps per segment must be positive")]
    ZeroSteps,
    #[error("protocol file: {0}")]
    MalformedProtocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Piecewise-sinusoidal shaking protocol.
///
/// The lattice phase is `phi(t) = A_k sin(omega_s t)` where `A_k` is the
/// amplitude of the segment containing `t`. Each segment lasts half a drive
/// period, `pi / omega_s`, so the phase returns to zero at every boundary and
/// the protocol is continuous no matter how the amplitudes jump.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProtocol {
    /// Phase modulation amplitude per segment, rad.
    pub segment_amplitudes: Vec<f64>,
    /// Drive frequency in units of the recoil frequency.
    pub omega_s_over_omega_r: f64,
}

impl ControlProtocol {
    pub fn new(segment_amplitudes: Vec<f64>, omega_s_over_omega_r: f64) -> Result<Self, DynamicsError> {
        if segment_amplitudes.is_empty() {
            return Err(DynamicsError::EmptyProtocol);
        }
        if !(omega_s_over_omega_r > 0.0) || !omega_s_over_omega_r.is_finite() {
            return Err(DynamicsError::InvalidDriveFrequency(omega_s_over_omega_r));
        }
        Ok(Self {
            segment_amplitudes,
            omega_s_over_omega_r,
        })
    }

    /// The all-zero (unshaken) protocol.
    pub fn idle(segments: usize) -> Self {
        Self::new(vec![0.0; segments], DEFAULT_OMEGA_S_OVER_OMEGA_R).expect("idle protocol is valid")
    }

    pub fn segments(&self) -> usize {
        self.segment_amplitudes.len()
    }

    /// Segment duration in recoil units: half a drive period.
    pub fn segment_tau(&self) -> f64 {
        std::f64::consts::PI / self.omega_s_over_omega_r
    }

    /// Total protocol duration in recoil units.
    pub fn total_tau(&self) -> f64 {
        self.segment_tau() * self.segments() as f64
    }

    /// Total protocol duration in seconds.
    pub fn total_seconds(&self, scales: &PhysicalScales) -> f64 {
        scales.seconds_from_tau(self.total_tau())
    }

    /// Segment index containing recoil time `tau` (the final boundary maps to
    /// the last segment).
    pub fn segment_at(&self, tau: f64) -> usize {
        let k = (tau / self.segment_tau()).floor() as i64;
        k.clamp(0, self.segments() as i64 - 1) as usize
    }

    /// Shaking phase at recoil time `tau`, rad. Errors outside the protocol
    /// span.
    pub fn value_at_tau(&self, tau: f64) -> Result<f64, DynamicsError> {
        let total = self.total_tau();
        if !(0.0..=total * (1.0 + 1e-12)).contains(&tau) {
            return Err(DynamicsError::TimeOutOfRange { tau, total });
        }
        let amp = self.segment_amplitudes[self.segment_at(tau)];
        Ok(amp * (self.omega_s_over_omega_r * tau).sin())
    }

    /// Shaking phase at lab time `t` in seconds.
    pub fn value_at_seconds(&self, scales: &PhysicalScales, t: f64) -> Result<f64, DynamicsError> {
        self.value_at_tau(scales.tau_from_seconds(t))
    }
}

/// The pair of unknowns the interferometer estimates, in natural units.
///
/// SI values enter and leave through [`EstimationPoint::from_si`] and the
/// accessors; everything internal runs on these dimensionless numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationPoint {
    /// Applied acceleration in units of standard gravity.
    pub a_over_g: f64,
    /// Lattice depth in recoil energies.
    pub depth_er: f64,
}

impl EstimationPoint {
    pub fn new(a_over_g: f64, depth_er: f64) -> Self {
        Self { a_over_g, depth_er }
    }

    /// From SI values: acceleration in m/s^2, depth in joules.
    pub fn from_si(accel: f64, depth_joule: f64, scales: &PhysicalScales) -> Self {
        Self {
            a_over_g: accel / crate::physcore::G_STANDARD,
            depth_er: scales.depth_from_joule(depth_joule),
        }
    }

    /// Acceleration in m/s^2.
    pub fn accel_si(&self) -> f64 {
        self.a_over_g * crate::physcore::G_STANDARD
    }

    /// Lattice depth in joules.
    pub fn depth_si(&self, scales: &PhysicalScales) -> f64 {
        scales.joule_from_depth(self.depth_er)
    }
}

/// Wavefunction together with its derivatives with respect to the two
/// estimated parameters, at one instant.
///
/// `dpsi_da` is the derivative with respect to `a/g`, `dpsi_dv` with respect
/// to `V_L/E_R`; multiply by `1/g` or `1/E_R` for the SI derivatives.
#[derive(Debug, Clone)]
pub struct AugmentedState {
    pub basis: MomentumBasis,
    pub psi: StateVector,
    pub dpsi_da: StateVector,
    pub dpsi_dv: StateVector,
    /// Recoil time of this snapshot.
    pub tau: f64,
}

impl AugmentedState {
    /// Start of an estimation run: given wavefunction, zero derivatives
    /// (preparation is parameter-independent), `tau = 0`.
    pub fn fresh(psi: StateVector, basis: MomentumBasis) -> Result<Self, DynamicsError> {
        if psi.dim() != basis.dim() {
            return Err(DynamicsError::BasisMismatch {
                state: psi.dim(),
                basis: basis.dim(),
            });
        }
        let dim = basis.dim();
        Ok(Self {
            basis,
            psi,
            dpsi_da: StateVector::zeros(dim),
            dpsi_dv: StateVector::zeros(dim),
            tau: 0.0,
        })
    }
}

/// Fixed-step integrator settings and safety thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// RK4 steps per drive segment.
    pub steps_per_segment: usize,
    /// Norm drift that aborts the run.
    pub norm_tolerance: f64,
    /// Boundary-comb occupation that records a truncation warning.
    pub truncation_warn: f64,
    /// Boundary-comb occupation that aborts the run.
    pub truncation_abort: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            steps_per_segment: DEFAULT_STEPS_PER_SEGMENT,
            norm_tolerance: 1e-6,
            truncation_warn: 1e-6,
            truncation_abort: 1e-3,
        }
    }
}

impl SolverSettings {
    pub fn with_steps(steps_per_segment: usize) -> Self {
        Self {
            steps_per_segment,
            ..Self::default()
        }
    }
}

/// What the integrator observed along the way.
#[derive(Debug, Clone, Copy, Default)]
pub struct PropagationDiagnostics {
    pub steps_taken: usize,
    /// Worst boundary-comb occupation seen at any step.
    pub max_boundary_occupation: f64,
    /// Set when the occupation crossed the warning threshold.
    pub truncation_warning: bool,
    /// `|norm/norm0 - 1|` at the final step.
    pub final_norm_drift: f64,
}

/// Propagated state plus integrator diagnostics.
#[derive(Debug, Clone)]
pub struct PropagationOutcome {
    pub state: AugmentedState,
    pub diagnostics: PropagationDiagnostics,
}

struct Stepper<'a> {
    dim: usize,
    /// Bare conversion factor: recoil momentum gained per unit recoil time at
    /// an acceleration of one g.
    kappa: f64,
    /// `kappa * a/g`; the kinetic momenta are shifted by `boost_rate * tau`.
    boost_rate: f64,
    depth: f64,
    momenta: Vec<f64>,
    protocol: &'a ControlProtocol,
    with_derivatives: bool,
    // Scratch buffers for the RK4 stages, length 3*dim (or dim for
    // wavefunction-only runs).
    k1: Vec<Complex64>,
    k2: Vec<Complex64>,
    k3: Vec<Complex64>,
    k4: Vec<Complex64>,
    stage: Vec<Complex64>,
}

impl<'a> Stepper<'a> {
    fn new(
        basis: &MomentumBasis,
        protocol: &'a ControlProtocol,
        point: &EstimationPoint,
        scales: &PhysicalScales,
        with_derivatives: bool,
    ) -> Self {
        let dim = basis.dim();
        let len = if with_derivatives { 3 * dim } else { dim };
        Self {
            dim,
            kappa: scales.kappa(),
            boost_rate: scales.kappa() * point.a_over_g,
            depth: point.depth_er,
            momenta: (0..dim).map(|i| basis.momentum(i)).collect(),
            protocol,
            with_derivatives,
            k1: vec![Complex64::ZERO; len],
            k2: vec![Complex64::ZERO; len],
            k3: vec![Complex64::ZERO; len],
            k4: vec![Complex64::ZERO; len],
            stage: vec![Complex64::ZERO; len],
        }
    }

    /// Right-hand side of the joint Schrodinger system at recoil time `tau`,
    /// for the segment amplitude `amp`.
    ///
    /// `out[0..dim]`   <- -i H psi
    /// `out[dim..2d]`  <- -i (H dpsi_da + dH/da psi)
    /// `out[2d..3d]`   <- -i (H dpsi_dv + dH/dv psi)
    fn rhs(&self, tau: f64, amp: f64, y: &[Complex64], out: &mut [Complex64]) {
        let dim = self.dim;
        let phi = amp * (self.protocol.omega_s_over_omega_r * tau).sin();
        let up = Complex64::from_polar(-self.depth / 4.0, phi);
        let down = up.conj();
        // dH/dv has the same shift structure with unit strength.
        let up_v = Complex64::from_polar(-0.25, phi);
        let down_v = up_v.conj();
        let minus_i = Complex64::new(0.0, -1.0);

        let boost = self.boost_rate * tau;
        let apply_h = |v: &[Complex64], o: &mut [Complex64]| {
            for i in 0..dim {
                let shifted = self.momenta[i] - boost;
                let mut acc = Complex64::new(shifted * shifted, 0.0) * v[i];
                if i > 0 {
                    acc += up * v[i - 1];
                }
                if i + 1 < dim {
                    acc += down * v[i + 1];
                }
                o[i] = minus_i * acc;
            }
        };

        let psi = &y[0..dim];
        {
            let (head, _) = out.split_at_mut(dim);
            apply_h(psi, head);
        }
        if !self.with_derivatives {
            return;
        }
        {
            let (_, tail) = out.split_at_mut(dim);
            let (mid, last) = tail.split_at_mut(dim);
            apply_h(&y[dim..2 * dim], mid);
            apply_h(&y[2 * dim..3 * dim], last);
        }
        // Source terms. The acceleration derivative of the boosted kinetic
        // term is -2 kappa tau (p - kappa a tau), kept in full so the
        // derivative matches a finite difference of the propagated family
        // without any gauge alignment.
        let two_kt = 2.0 * self.kappa * tau;
        for i in 0..dim {
            let shifted = self.momenta[i] - boost;
            out[dim + i] += minus_i * Complex64::new(-two_kt * shifted, 0.0) * psi[i];
        }
        for i in 0..dim {
            let mut acc = Complex64::ZERO;
            if i > 0 {
                acc += up_v * psi[i - 1];
            }
            if i + 1 < dim {
                acc += down_v * psi[i + 1];
            }
            out[2 * dim + i] += minus_i * acc;
        }
    }

    /// One classic RK4 step from `tau` with width `dt`, in place.
    fn step(&mut self, tau: f64, dt: f64, amp: f64, y: &mut [Complex64]) {
        let n = y.len();
        let mut k1 = std::mem::take(&mut self.k1);
        let mut k2 = std::mem::take(&mut self.k2);
        let mut k3 = std::mem::take(&mut self.k3);
        let mut k4 = std::mem::take(&mut self.k4);
        let mut stage = std::mem::take(&mut self.stage);

        self.rhs(tau, amp, y, &mut k1);
        for i in 0..n {
            stage[i] = y[i] + 0.5 * dt * k1[i];
        }
        self.rhs(tau + 0.5 * dt, amp, &stage, &mut k2);
        for i in 0..n {
            stage[i] = y[i] + 0.5 * dt * k2[i];
        }
        self.rhs(tau + 0.5 * dt, amp, &stage, &mut k3);
        for i in 0..n {
            stage[i] = y[i] + dt * k3[i];
        }
        self.rhs(tau + dt, amp, &stage, &mut k4);
        let w = dt / 6.0;
        for i in 0..n {
            y[i] += w * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }

        self.k1 = k1;
        self.k2 = k2;
        self.k3 = k3;
        self.k4 = k4;
        self.stage = stage;
    }
}

/// Advance an augmented state to `end_tau` under `protocol` at the estimation
/// point `point`.
///
/// The start and end times must both sit on the integrator's step grid
/// (`segment duration / steps_per_segment`); segment boundaries always do.
/// The run aborts with an error if the norm drifts beyond the configured
/// tolerance or the boundary comb states accumulate more than the truncation
/// limit. Crossing the warning threshold only flags the diagnostics.
pub fn propagate_to(
    initial: &AugmentedState,
    protocol: &ControlProtocol,
    point: &EstimationPoint,
    scales: &PhysicalScales,
    settings: &SolverSettings,
    end_tau: f64,
) -> Result<PropagationOutcome, DynamicsError> {
    let mut state = initial.clone();
    let diagnostics = drive(
        &mut state,
        protocol,
        point,
        scales,
        settings,
        end_tau,
        true,
        |_, _| {},
    )?;
    Ok(PropagationOutcome { state, diagnostics })
}

/// Propagate an augmented state through the whole protocol.
pub fn propagate_augmented(
    initial: &AugmentedState,
    protocol: &ControlProtocol,
    point: &EstimationPoint,
    scales: &PhysicalScales,
    settings: &SolverSettings,
) -> Result<PropagationOutcome, DynamicsError> {
    propagate_to(initial, protocol, point, scales, settings, protocol.total_tau())
}

/// Propagate only the wavefunction through the whole protocol (no parameter
/// derivatives). Identical stepping to [`propagate_augmented`], about three
/// times cheaper; used for likelihood-grid construction.
pub fn propagate_wavefunction(
    psi: &StateVector,
    basis: &MomentumBasis,
    protocol: &ControlProtocol,
    point: &EstimationPoint,
    scales: &PhysicalScales,
    settings: &SolverSettings,
) -> Result<(StateVector, PropagationDiagnostics), DynamicsError> {
    let mut state = AugmentedState::fresh(psi.clone(), *basis)?;
    let diagnostics = drive(
        &mut state,
        protocol,
        point,
        scales,
        settings,
        protocol.total_tau(),
        false,
        |_, _| {},
    )?;
    Ok((state.psi, diagnostics))
}

/// Propagate through the whole protocol, handing every `stride`-th step (and
/// the initial and final states) to `observer`.
pub fn propagate_observed(
    initial: &AugmentedState,
    protocol: &ControlProtocol,
    point: &EstimationPoint,
    scales: &PhysicalScales,
    settings: &SolverSettings,
    stride: usize,
    mut observer: impl FnMut(&AugmentedState, &PropagationDiagnostics),
) -> Result<PropagationOutcome, DynamicsError> {
    let mut state = initial.clone();
    let stride = stride.max(1);
    let diagnostics = drive(
        &mut state,
        protocol,
        point,
        scales,
        settings,
        protocol.total_tau(),
        true,
        |s, d| {
            if d.steps_taken % stride == 0 {
                observer(s, d);
            }
        },
    )?;
    observer(&state, &diagnostics);
    Ok(PropagationOutcome { state, diagnostics })
}

#[allow(clippy::too_many_arguments)]
fn drive(
    state: &mut AugmentedState,
    protocol: &ControlProtocol,
    point: &EstimationPoint,
    scales: &PhysicalScales,
    settings: &SolverSettings,
    end_tau: f64,
    with_derivatives: bool,
    mut on_step: impl FnMut(&AugmentedState, &PropagationDiagnostics),
) -> Result<PropagationDiagnostics, DynamicsError> {
    if settings.steps_per_segment == 0 {
        return Err(DynamicsError::ZeroSteps);
    }
    if state.psi.dim() != state.basis.dim() {
        return Err(DynamicsError::BasisMismatch {
            state: state.psi.dim(),
            basis: state.basis.dim(),
        });
    }
    let total = protocol.total_tau();
    for bound in [state.tau, end_tau] {
        if !(-1e-12..=total + 1e-12).contains(&bound) {
            return Err(DynamicsError::TimeOutOfRange { tau: bound, total });
        }
    }
    let dt = protocol.segment_tau() / settings.steps_per_segment as f64;
    let start_step = grid_index(state.tau, dt).ok_or(DynamicsError::MisalignedSpan {
        start: state.tau,
        end: end_tau,
    })?;
    let end_step = grid_index(end_tau, dt).ok_or(DynamicsError::MisalignedSpan {
        start: state.tau,
        end: end_tau,
    })?;
    if end_step < start_step {
        return Err(DynamicsError::MisalignedSpan {
            start: state.tau,
            end: end_tau,
        });
    }

    let dim = state.basis.dim();
    let mut stepper = Stepper::new(&state.basis, protocol, point, scales, with_derivatives);
    let mut y = if with_derivatives {
        let mut joint = Vec::with_capacity(3 * dim);
        joint.extend_from_slice(&state.psi.amplitudes);
        joint.extend_from_slice(&state.dpsi_da.amplitudes);
        joint.extend_from_slice(&state.dpsi_dv.amplitudes);
        joint
    } else {
        state.psi.amplitudes.clone()
    };

    let norm0 = state.psi.norm();
    let mut diag = PropagationDiagnostics::default();
    let steps_per_segment = settings.steps_per_segment;

    for global in start_step..end_step {
        let tau = global as f64 * dt;
        let segment = (global / steps_per_segment).min(protocol.segments() - 1);
        let amp = protocol.segment_amplitudes[segment];
        stepper.step(tau, dt, amp, &mut y);
        diag.steps_taken += 1;

        let psi_norm_sqr: f64 = y[0..dim].iter().map(|c| c.norm_sqr()).sum();
        let drift = (psi_norm_sqr.sqrt() / norm0 - 1.0).abs();
        diag.final_norm_drift = drift;
        if drift > settings.norm_tolerance {
            return Err(DynamicsError::NormDrift {
                tau: (global + 1) as f64 * dt,
                drift,
                limit: settings.norm_tolerance,
            });
        }
        // With the lattice off the comb populations are constants of motion,
        // so boundary occupation signals nothing about truncation error.
        if point.depth_er > 0.0 {
            let boundary = (y[0].norm_sqr() + y[dim - 1].norm_sqr()) / psi_norm_sqr;
            if boundary > diag.max_boundary_occupation {
                diag.max_boundary_occupation = boundary;
            }
            if boundary > settings.truncation_abort {
                return Err(DynamicsError::TruncationAbort {
                    tau: (global + 1) as f64 * dt,
                    occupation: boundary,
                    limit: settings.truncation_abort,
                });
            }
            if boundary > settings.truncation_warn {
                diag.truncation_warning = true;
            }
        }

        write_back(state, &y, (global + 1) as f64 * dt, with_derivatives);
        on_step(state, &diag);
    }
    if diag.steps_taken == 0 {
        state.tau = end_tau;
    }
    Ok(diag)
}

fn write_back(state: &mut AugmentedState, y: &[Complex64], tau: f64, with_derivatives: bool) {
    let dim = state.basis.dim();
    state.psi.amplitudes.copy_from_slice(&y[0..dim]);
    if with_derivatives {
        state.dpsi_da.amplitudes.copy_from_slice(&y[dim..2 * dim]);
        state.dpsi_dv.amplitudes.copy_from_slice(&y[2 * dim..3 * dim]);
    }
    state.tau = tau;
}

/// Index of `tau` on the step grid, if it lies on it (within 1e-9 of a step).
fn grid_index(tau: f64, dt: f64) -> Option<usize> {
    let x = tau / dt;
    let rounded = x.round();
    if (x - rounded).abs() < 1e-9 && rounded >= 0.0 {
        Some(rounded as usize)
    } else {
        None
    }
}

/// Probability of each momentum comb state, `|c_n|^2` in index order.
pub fn momentum_distribution(state: &StateVector) -> Vec<f64> {
    state.amplitudes.iter().map(|c| c.norm_sqr()).collect()
}

/// Incoherent average of per-quasimomentum distributions with the grid's
/// weights. All states must share a dimension.
pub fn averaged_distribution(states: &[StateVector], grid: &QuasimomentumGrid) -> Vec<f64> {
    assert_eq!(states.len(), grid.len(), "one state per quasimomentum");
    let dim = states[0].dim();
    let mut out = vec![0.0; dim];
    for (s, &w) in states.iter().zip(&grid.weights) {
        for (o, c) in out.iter_mut().zip(&s.amplitudes) {
            *o += w * c.norm_sqr();
        }
    }
    out
}

/// Occupation of each Bloch band: `|<band_j|psi>|^2`.
pub fn band_occupations(state: &StateVector, bands: &BlochDecomposition) -> Vec<f64> {
    bands
        .states
        .iter()
        .map(|b| b.inner(state).norm_sqr())
        .collect()
}

/// Position density over one lattice period, for visualization.
#[derive(Debug, Clone)]
pub struct PositionDensity {
    /// Sample positions in units of `1/k_L`, spanning one period
    /// `[-pi/2, pi/2)` centred on a potential well.
    pub x_kl: Vec<f64>,
    /// Probability density, normalized to unit integral over the period.
    pub density: Vec<f64>,
}

/// Reconstruct a position-space density from the momentum comb, broadening
/// each comb tooth into a Gaussian of width `sigma_p` (in `hbar k_L`). The
/// broadening becomes a Gaussian envelope in position; as `sigma_p -> 0` a
/// single comb state turns into a uniform density.
pub fn position_density(state: &StateVector, basis: &MomentumBasis, sigma_p: f64, points: usize) -> PositionDensity {
    let points = points.max(2);
    let mut x_kl = Vec::with_capacity(points);
    let mut density = Vec::with_capacity(points);
    let dx = std::f64::consts::PI / points as f64;
    for j in 0..points {
        let x = -std::f64::consts::FRAC_PI_2 + (j as f64 + 0.5) * dx;
        let envelope = (-0.5 * (sigma_p * x).powi(2)).exp();
        let mut amp = Complex64::ZERO;
        for (i, c) in state.amplitudes.iter().enumerate() {
            amp += c * Complex64::from_polar(1.0, basis.momentum(i) * x);
        }
        x_kl.push(x);
        density.push((amp * envelope).norm_sqr());
    }
    let integral: f64 = density.iter().sum::<f64>() * dx;
    if integral > 0.0 {
        for d in &mut density {
            *d /= integral;
        }
    }
    PositionDensity { x_kl, density }
}

/// Phase of the mean lattice-site displacement, `arg <e^{i 2 k_L x}>`, rad.
///
/// Returns 0 when the expectation's magnitude is below 1e-12, where the
/// phase is undefined.
pub fn mean_position_phase(state: &StateVector) -> f64 {
    let mut acc = Complex64::ZERO;
    for w in state.amplitudes.windows(2) {
        acc += w[1].conj() * w[0];
    }
    if acc.norm() < 1e-12 {
        0.0
    } else {
        acc.arg()
    }
}

/// Mean momentum `<p>` in units of `hbar k_L`.
pub fn mean_momentum(state: &StateVector, basis: &MomentumBasis) -> f64 {
    state
        .amplitudes
        .iter()
        .enumerate()
        .map(|(i, c)| basis.momentum(i) * c.norm_sqr())
        .sum()
}

/// On-disk protocol description.
///
/// Amplitudes are stored as decimal strings so that a load/save cycle is
/// byte-identical and independent of any float-formatting choice. Fresh
/// protocols format their amplitudes with the shortest representation that
/// parses back to the same value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolFile {
    pub format_version: u32,
    pub omega_s_over_omega_r: f64,
    /// Momentum comb truncation used to design/validate this protocol.
    pub n_max: usize,
    /// Quasimomenta the protocol is meant to be averaged over.
    pub q_list: Vec<f64>,
    pub segment_amplitudes: Vec<String>,
    /// Integrator step as a fraction of the segment duration (e.g. 1/256).
    pub dt_over_segment: f64,
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

/// Current protocol file format version.
pub const PROTOCOL_FORMAT_VERSION: u32 = 1;

impl ProtocolFile {
    /// Describe a runtime protocol for storage.
    pub fn from_protocol(
        protocol: &ControlProtocol,
        n_max: usize,
        q_list: Vec<f64>,
        steps_per_segment: usize,
    ) -> Self {
        Self {
            format_version: PROTOCOL_FORMAT_VERSION,
            omega_s_over_omega_r: protocol.omega_s_over_omega_r,
            n_max,
            q_list,
            segment_amplitudes: protocol
                .segment_amplitudes
                .iter()
                .map(|a| format!("{a}"))
                .collect(),
            dt_over_segment: 1.0 / steps_per_segment as f64,
            metadata: serde_json::Map::new(),
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.format_version != PROTOCOL_FORMAT_VERSION {
            return Err(DynamicsError::MalformedProtocol(format!(
                "unsupported format_version {} (expected {PROTOCOL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.segment_amplitudes.is_empty() {
            return Err(DynamicsError::MalformedProtocol("no segments".into()));
        }
        if !(self.omega_s_over_omega_r > 0.0) || !self.omega_s_over_omega_r.is_finite() {
            return Err(DynamicsError::MalformedProtocol(format!(
                "bad drive frequency ratio {}",
                self.omega_s_over_omega_r
            )));
        }
        if self.n_max < 1 {
            return Err(DynamicsError::MalformedProtocol("n_max must be >= 1".into()));
        }
        if self.q_list.is_empty() {
            return Err(DynamicsError::MalformedProtocol("empty q_list".into()));
        }
        for &q in &self.q_list {
            if !(-1.0..1.0).contains(&q) {
                return Err(DynamicsError::MalformedProtocol(format!(
                    "quasimomentum {q} outside [-1, 1)"
                )));
            }
        }
        self.steps_per_segment()?;
        for s in &self.segment_amplitudes {
            let v: f64 = s
                .parse()
                .map_err(|_| DynamicsError::MalformedProtocol(format!("bad amplitude '{s}'")))?;
            if !v.is_finite() {
                return Err(DynamicsError::MalformedProtocol(format!(
                    "non-finite amplitude '{s}'"
                )));
            }
        }
        Ok(())
    }

    /// Integrator steps per segment implied by `dt_over_segment`, which must
    /// be the reciprocal of a positive integer.
    pub fn steps_per_segment(&self) -> Result<usize, DynamicsError> {
        let r = self.dt_over_segment;
        if !(r > 0.0) || !r.is_finite() || r > 1.0 {
            return Err(DynamicsError::MalformedProtocol(format!(
                "dt_over_segment {r} outside (0, 1]"
            )));
        }
        let steps = (1.0 / r).round();
        if (r * steps - 1.0).abs() > 1e-9 {
            return Err(DynamicsError::MalformedProtocol(format!(
                "dt_over_segment {r} is not the reciprocal of an integer"
            )));
        }
        Ok(steps as usize)
    }

    /// Parse the stored amplitudes into a runtime protocol.
    pub fn control_protocol(&self) -> Result<ControlProtocol, DynamicsError> {
        self.validate()?;
        let amplitudes = self
            .segment_amplitudes
            .iter()
            .map(|s| s.parse::<f64>().expect("validated above"))
            .collect();
        ControlProtocol::new(amplitudes, self.omega_s_over_omega_r)
    }

    pub fn solver_settings(&self) -> Result<SolverSettings, DynamicsError> {
        Ok(SolverSettings::with_steps(self.steps_per_segment()?))
    }

    pub fn load(path: &Path) -> Result<Self, DynamicsError> {
        let text = std::fs::read_to_string(path)?;
        let file: Self = serde_json::from_str(&text)
            .map_err(|e| DynamicsError::MalformedProtocol(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), DynamicsError> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| DynamicsError::MalformedProtocol(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Content hash over everything that affects the physics: amplitudes as
    /// parsed values, drive frequency, basis, quasimomenta, and step size.
    pub fn content_hash(&self) -> String {
        let mut hasher = crate::cli::Hasher::new();
        hasher.tag("protocol-v1");
        hasher.f64(self.omega_s_over_omega_r);
        hasher.u64(self.n_max as u64);
        hasher.u64(self.q_list.len() as u64);
        for &q in &self.q_list {
            hasher.f64(q);
        }
        hasher.u64(self.segment_amplitudes.len() as u64);
        for s in &self.segment_amplitudes {
            hasher.f64(s.parse::<f64>().unwrap_or(f64::NAN));
        }
        hasher.f64(self.dt_over_segment);
        hasher.finish()
    }
}
