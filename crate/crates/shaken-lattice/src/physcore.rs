//! Physical scales, momentum-comb basis, and Bloch-band structure for an atom
//! in a one-dimensional optical lattice.
//!
//! The lattice potential couples plane waves separated by two photon recoils,
//! so a state with quasimomentum `q` lives on the discrete comb
//! `p_n = (2n + q) hbar k_L` with `n = -n_max ..= n_max`. Everything downstream
//! (propagation, Fisher information, likelihood grids) operates on amplitude
//! vectors over this comb.
//!
//! Unit conventions: energies in recoil energies `E_R = hbar^2 k_L^2 / 2m`,
//! times in `1/omega_R` with `omega_R = E_R / hbar`, momenta in `hbar k_L`,
//! accelerations in units of standard gravity. [`PhysicalScales`] performs all
//! SI conversions.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reduced Planck constant, J s (2018 CODATA exact value).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Atomic mass unit, kg.
pub const AMU: f64 = 1.660_539_07e-27;
/// Standard gravity, m/s^2.
pub const G_STANDARD: f64 = 9.806_65;

/// Errors from basis construction and band-structure routines.
#[derive(Debug, Error)]
pub enum PhysError {
    #[error("atomic mass must be positive, got {0} amu")]
    InvalidMass(f64),
    #[error("lattice wavelength must be positive, got {0} nm")]
    InvalidWavelength(f64),
    #[error("quasimomentum must lie in [-1, 1) hbar k_L, got {0}")]
    QuasimomentumOutOfRange(f64),
    #[error("momentum comb needs n_max >= 1, got {0}")]
    BasisTooSmall(usize),
    #[error("lattice depth must be non-negative, got {0} E_R")]
    NegativeDepth(f64),
    #[error("band index {band} out of range for basis of dimension {dim}")]
    BandOutOfRange { band: usize, dim: usize },
    #[error("quasimomentum grid needs at least one point")]
    EmptyQGrid,
    #[error("quasimomentum grid width must be positive for more than one point")]
    InvalidQWidth,
}

/// Derived recoil scales for a given atom and lattice wavelength.
///
/// Constructed once and threaded through every SI conversion. The defaults
/// describe rubidium-87 in a 1064 nm lattice, for which the recoil frequency
/// is about 2.03 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalScales {
    /// Atomic mass, kg.
    pub mass: f64,
    /// Lattice laser wavelength, m.
    pub wavelength: f64,
    /// Lattice wavenumber `k_L = 2 pi / lambda`, 1/m.
    pub k_l: f64,
    /// Recoil energy `hbar^2 k_L^2 / 2m`, J.
    pub e_r: f64,
    /// Recoil angular frequency `E_R / hbar`, rad/s.
    pub omega_r: f64,
    /// Recoil velocity `hbar k_L / m`, m/s.
    pub v_r: f64,
}

impl PhysicalScales {
    /// Build the scale set from an atomic mass in amu and a wavelength in nm.
    pub fn new(mass_amu: f64, wavelength_nm: f64) -> Result<Self, PhysError> {
        if !(mass_amu > 0.0) || !mass_amu.is_finite() {
            return Err(PhysError::InvalidMass(mass_amu));
        }
        if !(wavelength_nm > 0.0) || !wavelength_nm.is_finite() {
            return Err(PhysError::InvalidWavelength(wavelength_nm));
        }
        let mass = mass_amu * AMU;
        let wavelength = wavelength_nm * 1e-9;
        let k_l = 2.0 * std::f64::consts::PI / wavelength;
        let e_r = HBAR * HBAR * k_l * k_l / (2.0 * mass);
        Ok(Self {
            mass,
            wavelength,
            k_l,
            e_r,
            omega_r: e_r / HBAR,
            v_r: HBAR * k_l / mass,
        })
    }

    /// Rubidium-87 (86.9 amu) in a 1064 nm lattice.
    pub fn rubidium_87() -> Self {
        Self::new(86.9, 1064.0).expect("reference scales are valid")
    }

    /// Acceleration corresponding to one unit of the dimensionless drive,
    /// `v_R omega_R`, in m/s^2.
    pub fn accel_scale(&self) -> f64 {
        self.v_r * self.omega_r
    }

    /// Dimensionless gravity: how many recoil acceleration units one g is.
    /// This is the factor multiplying `a/g` inside the boosted-frame kinetic
    /// term.
    pub fn kappa(&self) -> f64 {
        G_STANDARD / self.accel_scale()
    }

    /// Convert a time in seconds to recoil units.
    pub fn tau_from_seconds(&self, t: f64) -> f64 {
        t * self.omega_r
    }

    /// Convert a recoil-unit time to seconds.
    pub fn seconds_from_tau(&self, tau: f64) -> f64 {
        tau / self.omega_r
    }

    /// Convert a lattice depth in joules to recoil energies.
    pub fn depth_from_joule(&self, v: f64) -> f64 {
        v / self.e_r
    }

    /// Convert a depth in recoil energies to joules.
    pub fn joule_from_depth(&self, v_er: f64) -> f64 {
        v_er * self.e_r
    }
}

/// Discrete momentum comb `p_n = (2n + q) hbar k_L`, `n = -n_max ..= n_max`.
///
/// Index 0 of an amplitude vector is `n = -n_max`; index `2 n_max` is
/// `n = +n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumBasis {
    pub n_max: usize,
    /// Quasimomentum in units of `hbar k_L`, restricted to `[-1, 1)`.
    pub q: f64,
}

/// Construct a momentum comb, validating the truncation order and
/// quasimomentum range.
pub fn build_basis(n_max: usize, q: f64) -> Result<MomentumBasis, PhysError> {
    if n_max < 1 {
        return Err(PhysError::BasisTooSmall(n_max));
    }
    if !(-1.0..1.0).contains(&q) || !q.is_finite() {
        return Err(PhysError::QuasimomentumOutOfRange(q));
    }
    Ok(MomentumBasis { n_max, q })
}

impl MomentumBasis {
    /// Number of comb states, `2 n_max + 1`.
    pub fn dim(&self) -> usize {
        2 * self.n_max + 1
    }

    /// The comb order `n` for a vector index.
    pub fn order(&self, index: usize) -> i64 {
        index as i64 - self.n_max as i64
    }

    /// Vector index for a comb order, or `None` when outside the truncation.
    pub fn index_of(&self, n: i64) -> Option<usize> {
        let shifted = n + self.n_max as i64;
        if (0..self.dim() as i64).contains(&shifted) {
            Some(shifted as usize)
        } else {
            None
        }
    }

    /// Momentum of comb state `index` in units of `hbar k_L`.
    pub fn momentum(&self, index: usize) -> f64 {
        2.0 * self.order(index) as f64 + self.q
    }

    /// Kinetic energies `(2n + q)^2` in recoil units, in index order.
    pub fn kinetic_diagonal(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let p = self.momentum(i);
                p * p
            })
            .collect()
    }
}

/// Complex amplitude vector over a momentum comb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            amplitudes: vec![Complex64::ZERO; dim],
        }
    }

    /// A single comb state `|n>` expressed on `basis`.
    pub fn comb_state(basis: &MomentumBasis, n: i64) -> Option<Self> {
        let mut s = Self::zeros(basis.dim());
        s.amplitudes[basis.index_of(n)?] = Complex64::ONE;
        Some(s)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Inner product `<self|other>` (conjugate-linear in `self`).
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scale(&mut self, factor: Complex64) {
        for c in &mut self.amplitudes {
            *c *= factor;
        }
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.scale(Complex64::new(1.0 / n, 0.0));
        }
    }

    /// Rotate the global phase so the component at `index` is real and
    /// non-negative. Leaves the state untouched when that component vanishes.
    pub fn fix_gauge_at(&mut self, index: usize) {
        let c = self.amplitudes[index];
        let m = c.norm();
        if m > 1e-300 {
            self.scale(c.conj() / m);
        }
    }
}

/// Band energies and Bloch states of the static lattice at one quasimomentum.
///
/// Bands are sorted by increasing energy. Eigenvector global phases are fixed
/// deterministically (largest-magnitude component real positive).
#[derive(Debug, Clone)]
pub struct BlochDecomposition {
    pub basis: MomentumBasis,
    /// Lattice depth in recoil energies.
    pub depth: f64,
    /// Phase offset of the lattice at diagonalization time, rad.
    pub phase: f64,
    /// Band energies in recoil units, ascending.
    pub energies: Vec<f64>,
    /// Bloch states on the comb, one per band, orthonormal.
    pub states: Vec<StateVector>,
}

impl BlochDecomposition {
    pub fn band(&self, index: usize) -> Result<&StateVector, PhysError> {
        self.states.get(index).ok_or(PhysError::BandOutOfRange {
            band: index,
            dim: self.basis.dim(),
        })
    }
}

/// Diagonalize the static lattice Hamiltonian
/// `p^2/2m - (V_L/2) cos(2 k_L x + phase)` on the comb at fixed
/// quasimomentum.
///
/// In the comb basis the Hamiltonian is tridiagonal: kinetic terms
/// `(2n + q)^2` on the diagonal and `-(V_L/4) e^{+/- i phase}` between
/// neighbours. A nonzero phase is a diagonal gauge rotation of the zero-phase
/// problem, so the real symmetric case is solved and the phase is restored on
/// the eigenvectors afterwards. At `q = 0` the even and odd parity sectors
/// are diagonalized separately; this keeps the near-degenerate outer band
/// pairs parity-pure, which a blind solver does not guarantee once their
/// splitting falls below machine precision.
pub fn bloch_diagonalize(
    depth: f64,
    basis: &MomentumBasis,
    phase: f64,
) -> Result<BlochDecomposition, PhysError> {
    if !(depth >= 0.0) || !depth.is_finite() {
        return Err(PhysError::NegativeDepth(depth));
    }
    let dim = basis.dim();
    let kinetic = basis.kinetic_diagonal();
    let coupling = -depth / 4.0;

    let mut pairs: Vec<(f64, Vec<f64>)> = if basis.q == 0.0 {
        diagonalize_parity_split(basis, &kinetic, coupling)
    } else {
        let h = DMatrix::from_fn(dim, dim, |r, c| {
            if r == c {
                kinetic[r]
            } else if r.abs_diff(c) == 1 {
                coupling
            } else {
                0.0
            }
        });
        let eig = h.symmetric_eigen();
        (0..dim)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
            .collect()
    };
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let states = pairs
        .iter()
        .map(|(_, v)| {
            let mut sv = StateVector {
                amplitudes: v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            };
            sv.normalize();
            let anchor = dominant_index(&sv);
            sv.fix_gauge_at(anchor);
            if phase != 0.0 {
                for (i, c) in sv.amplitudes.iter_mut().enumerate() {
                    let n = basis.order(i) as f64;
                    *c *= Complex64::from_polar(1.0, n * phase);
                }
            }
            sv
        })
        .collect();

    Ok(BlochDecomposition {
        basis: *basis,
        depth,
        phase,
        energies: pairs.into_iter().map(|(e, _)| e).collect(),
        states,
    })
}

/// Lowest-band Bloch state, with the global phase fixed so the `n = 0`
/// component is real and non-negative.
pub fn ground_state(depth: f64, basis: &MomentumBasis, phase: f64) -> Result<StateVector, PhysError> {
    let decomposition = bloch_diagonalize(depth, basis, phase)?;
    let mut state = decomposition.band(0)?.clone();
    state.fix_gauge_at(basis.n_max);
    Ok(state)
}

fn dominant_index(state: &StateVector) -> usize {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, c) in state.amplitudes.iter().enumerate() {
        let m = c.norm_sqr();
        if m > best_mag + 1e-300 {
            best_mag = m;
            best = i;
        }
    }
    best
}

/// Diagonalize the q = 0 comb Hamiltonian in parity-adapted coordinates.
///
/// Even sector: `|0>` and `(|n> + |-n>)/sqrt(2)`; odd sector:
/// `(|n> - |-n>)/sqrt(2)`. Both sectors are real symmetric tridiagonal, with
/// a sqrt(2)-enhanced coupling between `|0>` and the first even pair.
/// Returns (energy, comb-basis eigenvector) pairs, unsorted.
fn diagonalize_parity_split(
    basis: &MomentumBasis,
    kinetic: &[f64],
    coupling: f64,
) -> Vec<(f64, Vec<f64>)> {
    let n_max = basis.n_max;
    let dim = basis.dim();
    let center = n_max;
    let sqrt2 = std::f64::consts::SQRT_2;

    // Even block over [|0>, e_1, .., e_{n_max}].
    let even_dim = n_max + 1;
    let even = DMatrix::from_fn(even_dim, even_dim, |r, c| {
        if r == c {
            kinetic[center + r]
        } else if r.abs_diff(c) == 1 {
            if r.min(c) == 0 {
                coupling * sqrt2
            } else {
                coupling
            }
        } else {
            0.0
        }
    });
    // Odd block over [o_1, .., o_{n_max}].
    let odd = DMatrix::from_fn(n_max, n_max, |r, c| {
        if r == c {
            kinetic[center + 1 + r]
        } else if r.abs_diff(c) == 1 {
            coupling
        } else {
            0.0
        }
    });

    let mut out = Vec::with_capacity(dim);
    let even_eig = even.symmetric_eigen();
    for k in 0..even_dim {
        let col = even_eig.eigenvectors.column(k);
        let mut v = vec![0.0; dim];
        v[center] = col[0];
        for n in 1..=n_max {
            v[center + n] = col[n] / sqrt2;
            v[center - n] = col[n] / sqrt2;
        }
        out.push((even_eig.eigenvalues[k], v));
    }
    let odd_eig = odd.symmetric_eigen();
    for k in 0..n_max {
        let col = odd_eig.eigenvectors.column(k);
        let mut v = vec![0.0; dim];
        for n in 1..=n_max {
            v[center + n] = col[n - 1] / sqrt2;
            v[center - n] = -col[n - 1] / sqrt2;
        }
        out.push((odd_eig.eigenvalues[k], v));
    }
    out
}

/// Weighted set of quasimomenta modelling the finite momentum width of the
/// initial wave packet. Distributions computed per point are averaged
/// incoherently with these weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasimomentumGrid {
    /// Quasimomenta in `hbar k_L`, each within `[-1, 1)`.
    pub points: Vec<f64>,
    /// Normalized non-negative weights, same length as `points`.
    pub weights: Vec<f64>,
}

impl QuasimomentumGrid {
    /// A single quasimomentum with unit weight.
    pub fn single(q: f64) -> Result<Self, PhysError> {
        if !(-1.0..1.0).contains(&q) || !q.is_finite() {
            return Err(PhysError::QuasimomentumOutOfRange(q));
        }
        Ok(Self {
            points: vec![q],
            weights: vec![1.0],
        })
    }

    /// `count` quasimomenta uniformly spanning three standard deviations on
    /// each side of zero, Gaussian-weighted with standard deviation `sigma`
    /// (in `hbar k_L`). `count = 1` reduces to the single point `q = 0`.
    pub fn gaussian(count: usize, sigma: f64) -> Result<Self, PhysError> {
        if count == 0 {
            return Err(PhysError::EmptyQGrid);
        }
        if count == 1 {
            return Self::single(0.0);
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(PhysError::InvalidQWidth);
        }
        let half_span = (3.0 * sigma).min(0.999);
        let mut points = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        for k in 0..count {
            let frac = k as f64 / (count - 1) as f64;
            let q = -half_span + 2.0 * half_span * frac;
            points.push(q);
            weights.push((-0.5 * (q / sigma).powi(2)).exp());
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rubidium_scales_match_reference_values() {
        let s = PhysicalScales::rubidium_87();
        // Recoil frequency for 86.9 amu at 1064 nm is about 2.03 kHz.
        assert_relative_eq!(s.e_r / PLANCK, 2.0279e3, max_relative = 1e-3);
        assert_relative_eq!(s.omega_r, 1.2742e4, max_relative = 1e-3);
        assert_relative_eq!(s.v_r, 4.3155e-3, max_relative = 1e-3);
        assert_relative_eq!(s.k_l, 5.9052e6, max_relative = 1e-3);
    }

    #[test]
    fn scale_conversions_round_trip() {
        let s = PhysicalScales::rubidium_87();
        let t = 6.84e-4;
        assert_relative_eq!(s.seconds_from_tau(s.tau_from_seconds(t)), t, max_relative = 1e-14);
        let v = 10.0 * s.e_r;
        assert_relative_eq!(s.joule_from_depth(s.depth_from_joule(v)), v, max_relative = 1e-14);
    }

    #[test]
    fn rejects_unphysical_inputs() {
        assert!(PhysicalScales::new(-1.0, 1064.0).is_err());
        assert!(PhysicalScales::new(86.9, 0.0).is_err());
        assert!(build_basis(0, 0.0).is_err());
        assert!(build_basis(10, 1.0).is_err());
        assert!(build_basis(10, -1.5).is_err());
        let basis = build_basis(10, 0.0).unwrap();
        assert!(bloch_diagonalize(-2.0, &basis, 0.0).is_err());
    }

    #[test]
    fn basis_indexing_is_consistent() {
        let basis = build_basis(10, 0.0).unwrap();
        assert_eq!(basis.dim(), 21);
        assert_eq!(basis.order(0), -10);
        assert_eq!(basis.order(20), 10);
        assert_eq!(basis.index_of(0), Some(10));
        assert_eq!(basis.index_of(11), None);
        assert_relative_eq!(basis.momentum(12), 4.0);
        let shifted = build_basis(10, 0.25).unwrap();
        assert_relative_eq!(shifted.momentum(10), 0.25);
    }

    #[test]
    fn bloch_states_are_orthonormal() {
        let basis = build_basis(10, 0.0).unwrap();
        let d = bloch_diagonalize(10.0, &basis, 0.0).unwrap();
        for i in 0..d.states.len() {
            for j in 0..d.states.len() {
                let overlap = d.states[i].inner(&d.states[j]);
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (overlap.norm() - expected).abs() < 1e-10,
                    "bands {i},{j}: overlap {overlap}"
                );
            }
        }
        for w in d.energies.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn bloch_states_have_definite_parity_at_q_zero() {
        let basis = build_basis(10, 0.0).unwrap();
        let d = bloch_diagonalize(10.0, &basis, 0.0).unwrap();
        for (band, state) in d.states.iter().enumerate() {
            let c = &state.amplitudes;
            let even_dev: f64 = (1..=basis.n_max)
                .map(|n| {
                    let plus = c[basis.index_of(n as i64).unwrap()];
                    let minus = c[basis.index_of(-(n as i64)).unwrap()];
                    (plus - minus).norm()
                })
                .fold(0.0, f64::max);
            let odd_dev: f64 = (1..=basis.n_max)
                .map(|n| {
                    let plus = c[basis.index_of(n as i64).unwrap()];
                    let minus = c[basis.index_of(-(n as i64)).unwrap()];
                    (plus + minus).norm()
                })
                .fold(0.0, f64::max);
            // Each state is entirely even or entirely odd under n -> -n;
            // odd states also have no n = 0 weight.
            assert!(
                even_dev < 1e-10 || odd_dev < 1e-10,
                "band {band}: even dev {even_dev:.2e}, odd dev {odd_dev:.2e}"
            );
            if odd_dev < 1e-10 {
                assert!(c[basis.n_max].norm() < 1e-12);
            }
        }
    }

    #[test]
    fn free_lattice_reduces_to_kinetic_comb() {
        let basis = build_basis(6, 0.0).unwrap();
        let d = bloch_diagonalize(0.0, &basis, 0.0).unwrap();
        let mut expected = basis.kinetic_diagonal();
        expected.sort_by(f64::total_cmp);
        for (e, x) in d.energies.iter().zip(&expected) {
            assert_relative_eq!(e, x, epsilon = 1e-12);
        }
    }

    #[test]
    fn ground_state_gauge_is_real_positive_at_center() {
        let basis = build_basis(10, 0.0).unwrap();
        for phase in [0.0, 0.7, -2.1] {
            let g = ground_state(10.0, &basis, phase).unwrap();
            let c0 = g.amplitudes[basis.n_max];
            assert!(c0.im.abs() < 1e-14);
            assert!(c0.re > 0.0);
            assert_relative_eq!(g.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lattice_phase_is_a_pure_gauge_on_band_energies() {
        let basis = build_basis(8, 0.3).unwrap();
        let d0 = bloch_diagonalize(10.0, &basis, 0.0).unwrap();
        let d1 = bloch_diagonalize(10.0, &basis, 1.3).unwrap();
        for (a, b) in d0.energies.iter().zip(&d1.energies) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
        // Bloch state magnitudes are phase-independent.
        for (sa, sb) in d0.states.iter().zip(&d1.states) {
            for (ca, cb) in sa.amplitudes.iter().zip(&sb.amplitudes) {
                assert_relative_eq!(ca.norm(), cb.norm(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn deep_lattice_ground_band_approaches_harmonic_levels() {
        // For V_L >> E_R the well bottom is harmonic with spacing
        // 2 sqrt(V_L E_R); check the lowest gap at 40 E_R to ~10%.
        let basis = build_basis(15, 0.0).unwrap();
        let d = bloch_diagonalize(40.0, &basis, 0.0).unwrap();
        let gap = d.energies[1] - d.energies[0];
        let harmonic = 2.0 * 40.0_f64.sqrt();
        assert!((gap - harmonic).abs() / harmonic < 0.1, "gap {gap} vs {harmonic}");
    }

    #[test]
    fn quasimomentum_grid_reduces_to_single_point() {
        let g = QuasimomentumGrid::gaussian(1, 0.05).unwrap();
        assert_eq!(g.points, vec![0.0]);
        assert_eq!(g.weights, vec![1.0]);
        let g = QuasimomentumGrid::gaussian(7, 0.05).unwrap();
        assert_eq!(g.len(), 7);
        assert_relative_eq!(g.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // Symmetric grid, symmetric weights.
        for k in 0..g.len() {
            assert_relative_eq!(g.weights[k], g.weights[g.len() - 1 - k], epsilon = 1e-12);
            assert_relative_eq!(g.points[k], -g.points[g.len() - 1 - k], epsilon = 1e-12);
        }
        assert!(QuasimomentumGrid::gaussian(0, 0.1).is_err());
        assert!(QuasimomentumGrid::gaussian(5, 0.0).is_err());
    }
}
