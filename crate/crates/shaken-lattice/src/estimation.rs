//! Classical and quantum Fisher information for momentum-comb measurements,
//! and the scalar figures of merit derived from them.
//!
//! Measuring the momentum comb yields outcome probabilities
//! `P(n) = |c_n|^2`. The score of outcome `n` with respect to parameter `mu`
//! is `2 Re[c_n^* (d_mu c)_n] / P(n)`; the classical Fisher information
//! matrix (CFIM) is the probability-weighted outer product of scores. The
//! quantum Fisher information matrix (QFIM) for a pure state is
//! `4 Re[<d_mu psi|d_nu psi> - <d_mu psi|psi><psi|d_nu psi>]` and upper-bounds
//! the CFIM of any measurement.
//!
//! Parameter order everywhere: index 0 is the acceleration (per g), index 1
//! the lattice depth (per recoil energy). With `N` repetitions the covariance
//! of an unbiased estimator obeys `cov >= CFIM^{-1}/N >= QFIM^{-1}/N`, so the
//! acceleration variance after marginalizing the unknown depth is bounded by
//! `1 / (N I_a (1 - Corr^2))` with `Corr` the information correlation.

use nalgebra::{DMatrix, Matrix2};
use thiserror::Error;

use crate::dynamics::AugmentedState;
use crate::physcore::StateVector;

/// Outcome probabilities below this floor are excluded from score and CFIM
/// sums; they carry negligible information and would otherwise amplify float
/// noise.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Reward clamp for the nonlinear acceleration reward.
pub const DEFAULT_REWARD_CLAMP: f64 = 1e3;

/// Overflow guard on the argument of the lattice-depth reward.
pub const LATTICE_REWARD_ARG_CAP: f64 = 30.0;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("state and derivative dimensions disagree")]
    DimensionMismatch,
    #[error("no target indices given")]
    EmptyTargets,
    #[error("parameter index {0} out of range for a {1}x{1} matrix")]
    IndexOutOfRange(usize, usize),
    #[error(
        "nuisance information deficit: nuisance block is singular but still \
         coupled to the targets, so no finite marginal information exists"
    )]
    NuisanceDeficit,
    #[error("correlation undefined: diagonal information entry is not positive")]
    UndefinedCorrelation,
    #[error("mixture weights must be positive and of the same dimension")]
    BadMixture,
}

/// Per-outcome probabilities and score-function values.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    /// Comb index of each retained outcome.
    pub indices: Vec<usize>,
    /// Outcome probability, at or above the floor used to build the table.
    pub probabilities: Vec<f64>,
    /// Score per retained outcome and parameter, `scores[row][mu]`.
    pub scores: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn parameters(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }

    /// Probability-weighted mean of each score; zero for a well-formed table
    /// because the total probability is parameter-independent.
    pub fn mean_scores(&self) -> Vec<f64> {
        let k = self.parameters();
        let mut mean = vec![0.0; k];
        for (row, &p) in self.scores.iter().zip(&self.probabilities) {
            for (m, &s) in mean.iter_mut().zip(row) {
                *m += p * s;
            }
        }
        mean
    }
}

/// Score functions of the momentum measurement for an arbitrary list of
/// parameter derivatives. Outcomes with probability below `floor` are
/// dropped.
pub fn score_functions(
    psi: &StateVector,
    derivatives: &[&StateVector],
    floor: f64,
) -> Result<ScoreTable, EstimationError> {
    for d in derivatives {
        if d.dim() != psi.dim() {
            return Err(EstimationError::DimensionMismatch);
        }
    }
    let mut indices = Vec::new();
    let mut probabilities = Vec::new();
    let mut scores = Vec::new();
    for n in 0..psi.dim() {
        let c = psi.amplitudes[n];
        let p = c.norm_sqr();
        if p < floor {
            continue;
        }
        let row = derivatives
            .iter()
            .map(|d| 2.0 * (c.conj() * d.amplitudes[n]).re / p)
            .collect();
        indices.push(n);
        probabilities.push(p);
        scores.push(row);
    }
    Ok(ScoreTable {
        indices,
        probabilities,
        scores,
    })
}

/// CFIM assembled from a score table: `I_{mu nu} = sum_n P(n) l_mu(n) l_nu(n)`.
pub fn cfim_from_scores(table: &ScoreTable) -> DMatrix<f64> {
    let k = table.parameters();
    let mut m = DMatrix::zeros(k, k);
    for (row, &p) in table.scores.iter().zip(&table.probabilities) {
        for i in 0..k {
            for j in 0..k {
                m[(i, j)] += p * row[i] * row[j];
            }
        }
    }
    m
}

/// Pure-state QFIM for an arbitrary list of parameter derivatives.
pub fn qfim_general(
    psi: &StateVector,
    derivatives: &[&StateVector],
) -> Result<DMatrix<f64>, EstimationError> {
    for d in derivatives {
        if d.dim() != psi.dim() {
            return Err(EstimationError::DimensionMismatch);
        }
    }
    let k = derivatives.len();
    let overlaps: Vec<_> = derivatives.iter().map(|d| psi.inner(d)).collect();
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let dd = derivatives[i].inner(derivatives[j]);
            m[(i, j)] = 4.0 * (dd - overlaps[i].conj() * overlaps[j]).re;
        }
    }
    Ok(m)
}

/// CFIM of the momentum measurement for the standard (acceleration, depth)
/// pair.
pub fn cfim(state: &AugmentedState, floor: f64) -> Matrix2<f64> {
    cfim_mixture(&[(1.0, state)], floor).expect("single-component mixture is well-formed")
}

/// Pure-state QFIM for the standard (acceleration, depth) pair.
pub fn qfim(state: &AugmentedState) -> Matrix2<f64> {
    let m = qfim_general(&state.psi, &[&state.dpsi_da, &state.dpsi_dv])
        .expect("augmented state dimensions are consistent");
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

/// CFIM of the comb measurement on an incoherent quasimomentum mixture.
///
/// The mixture probability of bin `n` is the weighted sum of the component
/// probabilities, and its parameter derivative the weighted sum of component
/// derivatives, so the score is assembled from the summed quantities before
/// squaring.
pub fn cfim_mixture(
    components: &[(f64, &AugmentedState)],
    floor: f64,
) -> Result<Matrix2<f64>, EstimationError> {
    if components.is_empty() {
        return Err(EstimationError::BadMixture);
    }
    let dim = components[0].1.basis.dim();
    for (w, s) in components {
        if !(*w > 0.0) || s.psi.dim() != dim {
            return Err(EstimationError::BadMixture);
        }
    }
    let mut m = Matrix2::zeros();
    for n in 0..dim {
        let mut p = 0.0;
        let mut dp = [0.0; 2];
        for (w, s) in components {
            let c = s.psi.amplitudes[n];
            p += w * c.norm_sqr();
            dp[0] += w * 2.0 * (c.conj() * s.dpsi_da.amplitudes[n]).re;
            dp[1] += w * 2.0 * (c.conj() * s.dpsi_dv.amplitudes[n]).re;
        }
        if p < floor {
            continue;
        }
        for i in 0..2 {
            for j in 0..2 {
                m[(i, j)] += dp[i] * dp[j] / p;
            }
        }
    }
    Ok(m)
}

/// QFIM of an incoherent quasimomentum mixture: the weighted average of the
/// pure-state QFIMs. Valid because distinct quasimomenta occupy orthogonal
/// combs, evolve without mixing, and carry parameter-independent weights, so
/// the density matrix stays block diagonal and the symmetric logarithmic
/// derivative splits by block.
pub fn qfim_mixture(components: &[(f64, &AugmentedState)]) -> Result<Matrix2<f64>, EstimationError> {
    if components.is_empty() {
        return Err(EstimationError::BadMixture);
    }
    let mut m = Matrix2::zeros();
    for (w, s) in components {
        if !(*w > 0.0) {
            return Err(EstimationError::BadMixture);
        }
        m += qfim(s) * *w;
    }
    Ok(m)
}

/// CFIM and QFIM for one augmented state, in natural parameter units
/// (per g^2, per g E_R, per E_R^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherMatrices {
    pub cfim: Matrix2<f64>,
    pub qfim: Matrix2<f64>,
}

pub fn fisher_matrices(state: &AugmentedState, floor: f64) -> FisherMatrices {
    FisherMatrices {
        cfim: cfim(state, floor),
        qfim: qfim(state),
    }
}

impl FisherMatrices {
    /// Convert both matrices to SI parameter units
    /// (acceleration in m/s^2, depth in J).
    pub fn to_si(&self, scales: &crate::physcore::PhysicalScales) -> FisherMatrices {
        let ga = 1.0 / crate::physcore::G_STANDARD;
        let gv = 1.0 / scales.e_r;
        let scale = Matrix2::new(ga * ga, ga * gv, ga * gv, gv * gv);
        FisherMatrices {
            cfim: self.cfim.component_mul(&scale),
            qfim: self.qfim.component_mul(&scale),
        }
    }
}

/// Marginal information for a set of target parameters after eliminating the
/// nuisance block.
#[derive(Debug, Clone)]
pub struct MarginalInfo {
    /// Schur complement `A - C B^{-1} C^T` restricted to the targets.
    pub info: DMatrix<f64>,
    /// Nuisance indices that were dropped because they carry no information
    /// and no coupling. Surfaced so callers can warn.
    pub omitted_nuisance: Vec<usize>,
}

/// Marginalize an information matrix onto `targets`, treating all remaining
/// parameters as unknowns to be eliminated.
///
/// Nuisance rows whose diagonal vanishes are omitted when they are also
/// uncoupled (they describe parameters the data says nothing about); a
/// singular nuisance block that still couples to the targets means no finite
/// marginal information exists and is an error.
pub fn block_marginal(
    info: &DMatrix<f64>,
    targets: &[usize],
) -> Result<MarginalInfo, EstimationError> {
    let k = info.nrows();
    if info.ncols() != k {
        return Err(EstimationError::DimensionMismatch);
    }
    if targets.is_empty() {
        return Err(EstimationError::EmptyTargets);
    }
    for &t in targets {
        if t >= k {
            return Err(EstimationError::IndexOutOfRange(t, k));
        }
    }
    let scale = (0..k).map(|i| info[(i, i)].abs()).fold(0.0, f64::max);
    let tiny = 1e-12 * scale.max(f64::MIN_POSITIVE);

    let mut nuisance: Vec<usize> = (0..k).filter(|i| !targets.contains(i)).collect();
    let mut omitted = Vec::new();
    nuisance.retain(|&j| {
        let dead = info[(j, j)].abs() <= tiny;
        if dead {
            omitted.push(j);
        }
        !dead
    });
    // A dead nuisance row may only be dropped if nothing couples to it.
    for &j in &omitted {
        for i in 0..k {
            if i != j && info[(i, j)].abs() > tiny {
                return Err(EstimationError::NuisanceDeficit);
            }
        }
    }

    let t = targets.len();
    let a = DMatrix::from_fn(t, t, |r, c| info[(targets[r], targets[c])]);
    if nuisance.is_empty() {
        return Ok(MarginalInfo {
            info: a,
            omitted_nuisance: omitted,
        });
    }
    let nn = nuisance.len();
    let b = DMatrix::from_fn(nn, nn, |r, c| info[(nuisance[r], nuisance[c])]);
    let c = DMatrix::from_fn(t, nn, |r, cc| info[(targets[r], nuisance[cc])]);

    let svd = b.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * smax.max(f64::MIN_POSITIVE) {
        return Err(EstimationError::NuisanceDeficit);
    }
    let b_inv_ct = svd
        .solve(&c.transpose(), 0.0)
        .map_err(|_| EstimationError::NuisanceDeficit)?;
    Ok(MarginalInfo {
        info: a - &c * b_inv_ct,
        omitted_nuisance: omitted,
    })
}

/// Dimensionless information correlation
/// `Corr = I_{mu nu} / sqrt(I_mu I_nu)`.
pub fn correlation(info: &Matrix2<f64>, mu: usize, nu: usize) -> Result<f64, EstimationError> {
    for &i in &[mu, nu] {
        if i >= 2 {
            return Err(EstimationError::IndexOutOfRange(i, 2));
        }
    }
    let d_mu = info[(mu, mu)];
    let d_nu = info[(nu, nu)];
    if !(d_mu > 0.0) || !(d_nu > 0.0) {
        return Err(EstimationError::UndefinedCorrelation);
    }
    Ok(info[(mu, nu)] / (d_mu * d_nu).sqrt())
}

/// Lower bound on the variance of the target parameter after `shots`
/// repetitions, `1 / (N I (1 - Corr^2))`. Perfect correlation returns
/// positive infinity: the nuisance parameter absorbs all information.
pub fn variance_penalty_bound(info_target: f64, corr: f64, shots: u64) -> f64 {
    let denom = shots as f64 * info_target * (1.0 - corr * corr);
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / denom
    }
}

/// Scalar summary of a protocol's metrological performance.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SensitivityReport {
    /// CFIM entries in natural units, row-major.
    pub cfim: [[f64; 2]; 2],
    /// QFIM entries in natural units, row-major.
    pub qfim: [[f64; 2]; 2],
    /// Acceleration information after marginalizing the depth, per g^2.
    pub marginal_info_a: f64,
    /// Depth information after marginalizing the acceleration, per E_R^2.
    pub marginal_info_v: f64,
    /// Information correlation between the two parameters.
    pub correlation: f64,
    /// Marginal acceleration information relative to the Mach-Zehnder
    /// reference of equal duration.
    pub zeta_a: f64,
    /// The reference information used for `zeta_a`, per g^2.
    pub mzi_reference: f64,
}

/// Build the summary from Fisher matrices and a Mach-Zehnder reference
/// information (natural units, per g^2).
pub fn sensitivity_report(
    matrices: &FisherMatrices,
    mzi_reference: f64,
) -> Result<SensitivityReport, EstimationError> {
    let m = DMatrix::from_fn(2, 2, |r, c| matrices.cfim[(r, c)]);
    let marginal_a = block_marginal(&m, &[0])?.info[(0, 0)];
    let marginal_v = block_marginal(&m, &[1])?.info[(0, 0)];
    let corr = correlation(&matrices.cfim, 0, 1)?;
    Ok(SensitivityReport {
        cfim: [
            [matrices.cfim[(0, 0)], matrices.cfim[(0, 1)]],
            [matrices.cfim[(1, 0)], matrices.cfim[(1, 1)]],
        ],
        qfim: [
            [matrices.qfim[(0, 0)], matrices.qfim[(0, 1)]],
            [matrices.qfim[(1, 0)], matrices.qfim[(1, 1)]],
        ],
        marginal_info_a: marginal_a,
        marginal_info_v: marginal_v,
        correlation: corr,
        zeta_a: marginal_a / mzi_reference,
        mzi_reference,
    })
}

/// Nonlinear acceleration reward. `f = zeta_a / 2` maps the open-ended
/// information gain onto `[0, 1)`; the reward `f / (1 - f)` then grows
/// steeply as a protocol approaches twice the Mach-Zehnder reference, pushing
/// the designer beyond merely matched performance. Clamped at `r_max`.
pub fn reward_accel(marginal_info_a: f64, mzi_reference: f64, r_max: f64) -> f64 {
    if !(marginal_info_a > 0.0) || !(mzi_reference > 0.0) {
        return 0.0;
    }
    let f = 0.5 * marginal_info_a / mzi_reference;
    if f >= 1.0 {
        return r_max;
    }
    (f / (1.0 - f)).clamp(0.0, r_max)
}

/// Lattice-depth reward `sinh(4 I_V)` with the marginal depth information in
/// inverse recoil energies squared. The argument is capped to avoid overflow.
pub fn reward_lattice(marginal_info_v: f64) -> f64 {
    (4.0 * marginal_info_v).clamp(0.0, LATTICE_REWARD_ARG_CAP).sinh()
}

/// Raw single-parameter reward: the diagonal CFIM entry of the target, as
/// used by single-parameter baselines that assume the other parameter is
/// known perfectly.
pub fn single_param_reward(cfim: &Matrix2<f64>, target: usize) -> Result<f64, EstimationError> {
    if target >= 2 {
        return Err(EstimationError::IndexOutOfRange(target, 2));
    }
    Ok(cfim[(target, target)])
}

/// Smallest eigenvalue of a symmetric 2x2 matrix.
pub fn min_eigenvalue_2x2(m: &Matrix2<f64>) -> f64 {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    0.5 * (tr - disc)
}
