//! Closed-form free-fall (zero lattice depth) augmented states and textbook
//! interferometer Fisher informations. These are the exact references the
//! numerical propagator is validated against, and the baseline the designer's
//! acceleration reward is normalized by.
//!
//! In free fall, each momentum component only accumulates the boosted-frame
//! kinetic phase `Phi_n(t) = (1/hbar) int (p_n - m a s)^2 / 2m ds`, so the
//! wavefunction and its acceleration derivative follow by differentiating the
//! phase. For a balanced superposition `(|p0> + |-p0>)/sqrt(2)` held for a
//! time `T`, the acceleration information is `(p0 T^2 / hbar)^2` whatever the
//! acceleration itself; a Mach-Zehnder interferometer with arm separation
//! `2 p0` and half-time `T/2` reaches a quarter of that.

use num_complex::Complex64;

use crate::dynamics::{AugmentedState, EstimationPoint};
use crate::physcore::{build_basis, PhysError, PhysicalScales, StateVector, G_STANDARD, HBAR};

/// Fisher information of an ideal Mach-Zehnder interferometer with momentum
/// splitting `2 p0` and total duration `t_total` (two halves of `t_total/2`).
///
/// SI units: `p0` in kg m/s, `t_total` in s, result per (m/s^2)^2.
pub fn mzi_fisher(p0: f64, t_total: f64) -> f64 {
    let half = 0.5 * t_total;
    let x = 2.0 * p0 * half * half / HBAR;
    x * x
}

/// Fisher information of a Ramsey-type superposition `(|p0> + |-p0>)/sqrt(2)`
/// interrogated for `t`: `(p0 t^2 / hbar)^2`. Exactly four times
/// [`mzi_fisher`] at the same total duration.
pub fn ramsey_fisher(p0: f64, t: f64) -> f64 {
    let x = p0 * t * t / HBAR;
    x * x
}

/// Free-fall scenario: a balanced two-momentum superposition coasting for a
/// fixed time at some acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeSpaceScenario {
    /// Comb order of the superposed momenta: `p0 = 2 * comb_order` recoil
    /// momenta.
    pub comb_order: usize,
    /// Acceleration in units of g.
    pub a_over_g: f64,
    /// Interrogation time in recoil units.
    pub total_tau: f64,
}

impl FreeSpaceScenario {
    /// Momentum splitting `p0` in units of `hbar k_L`.
    pub fn p0_units(&self) -> f64 {
        2.0 * self.comb_order as f64
    }

    /// The estimation point this scenario sits at (depth is zero).
    pub fn point(&self) -> EstimationPoint {
        EstimationPoint::new(self.a_over_g, 0.0)
    }
}

/// Exact augmented state of the scenario on the minimal comb containing both
/// momenta.
///
/// `psi` and `dpsi_da` are closed forms. The depth derivative `dpsi_dv` is
/// left at zero: it is not part of the free-fall solution, so only the
/// acceleration row of Fisher matrices built from this state is meaningful.
/// Numerical cross-checks against [`crate::dynamics::propagate_augmented`]
/// should compare `psi`, `dpsi_da`, and the acceleration QFIM element.
pub fn analytic_augmented_state(
    scenario: &FreeSpaceScenario,
    scales: &PhysicalScales,
) -> Result<AugmentedState, PhysError> {
    let n0 = scenario.comb_order.max(1);
    let basis = build_basis(n0, 0.0)?;
    let kappa = scales.kappa();
    let boost = kappa * scenario.a_over_g;
    let tau = scenario.total_tau;

    let mut psi = StateVector::zeros(basis.dim());
    let mut dpsi_da = StateVector::zeros(basis.dim());
    let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    for sign in [1.0_f64, -1.0] {
        let p = sign * scenario.p0_units();
        let index = basis
            .index_of((sign * n0 as f64) as i64)
            .expect("basis contains +/- n0");
        // Kinetic phase of the boosted frame and its acceleration derivative.
        let phase = p * p * tau - p * boost * tau * tau + boost * boost * tau * tau * tau / 3.0;
        let dphase_da = -p * kappa * tau * tau + 2.0 * kappa * boost * tau * tau * tau / 3.0;
        let value = amp * Complex64::from_polar(1.0, -phase);
        psi.amplitudes[index] = value;
        dpsi_da.amplitudes[index] = Complex64::new(0.0, -dphase_da) * value;
    }

    Ok(AugmentedState {
        basis,
        psi,
        dpsi_da,
        dpsi_dv: StateVector::zeros(basis.dim()),
        tau,
    })
}

/// Closed-form acceleration QFIM element of the scenario, per g^2:
/// `4 Var(dPhi/da) = (2 kappa tau^2 p0)^2`. Independent of the acceleration.
pub fn analytic_accel_qfim(scenario: &FreeSpaceScenario, scales: &PhysicalScales) -> f64 {
    let x = 2.0 * scales.kappa() * scenario.total_tau * scenario.total_tau * scenario.p0_units();
    x * x
}

/// Mach-Zehnder reference information used to normalize acceleration rewards:
/// splitting `p0 = 4 hbar k_L`, total duration equal to the protocol's, in
/// natural units (per g^2).
pub fn designer_mzi_reference(scales: &PhysicalScales, total_tau: f64) -> f64 {
    let p0 = 4.0 * HBAR * scales.k_l;
    let t = scales.seconds_from_tau(total_tau);
    mzi_fisher(p0, t) * G_STANDARD * G_STANDARD
}
