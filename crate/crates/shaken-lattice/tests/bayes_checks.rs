//! Statistical checks of the Bayesian grid machinery against the Fisher
//! information of the underlying state: sampling frequencies, the local
//! log-posterior expansion, Cramér-Rao consistency of the posterior
//! covariance, shot-number scaling, and maximum-likelihood recovery.

use nalgebra::Matrix2;
use shaken_lattice::bayes::{
    build_likelihood_grid, mle, posterior_moments, sample_record, update_posterior,
    GridBuildConfig, GridSpec, LikelihoodGrid, PosteriorGrid,
};
use shaken_lattice::dynamics::{
    propagate_augmented, AugmentedState, ControlProtocol, EstimationPoint, SolverSettings,
};
use shaken_lattice::estimation::{cfim, min_eigenvalue_2x2, PROBABILITY_FLOOR};
use shaken_lattice::physcore::{build_basis, ground_state, PhysicalScales};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const N_MAX: usize = 8;
const STEPS: usize = 256;
const TRUTH_A: f64 = 0.0;
const TRUTH_V: f64 = 10.0;

fn probe_protocol() -> ControlProtocol {
    ControlProtocol::new(
        vec![0.7, 1.3, 0.9, 1.8, 0.5, 1.1, 1.6, 0.8],
        shaken_lattice::dynamics::DEFAULT_OMEGA_S_OVER_OMEGA_R,
    )
    .unwrap()
}

fn truth() -> EstimationPoint {
    EstimationPoint::new(TRUTH_A, TRUTH_V)
}

/// Classical Fisher information of the probe protocol at the truth point,
/// in natural units (per g^2 and per recoil energy squared).
fn truth_cfim(scales: &PhysicalScales) -> Matrix2<f64> {
    let basis = build_basis(N_MAX, 0.0).unwrap();
    let psi0 = ground_state(TRUTH_V, &basis, 0.0).unwrap();
    let initial = AugmentedState::fresh(psi0, basis).unwrap();
    let outcome = propagate_augmented(
        &initial,
        &probe_protocol(),
        &truth(),
        scales,
        &SolverSettings::with_steps(STEPS),
    )
    .unwrap();
    cfim(&outcome.state, PROBABILITY_FLOOR)
}

/// Builds a grid centered on the truth whose half-widths are `half_sigmas`
/// posterior standard deviations at `n_shots`, sized from the local CFIM.
fn adaptive_grid(
    info: &Matrix2<f64>,
    n_shots: f64,
    half_sigmas: f64,
    count: usize,
    scales: &PhysicalScales,
) -> LikelihoodGrid {
    let inv = info.try_inverse().expect("CFIM invertible for the probe");
    let sigma_a = (inv[(0, 0)] / n_shots).sqrt();
    let sigma_v = (inv[(1, 1)] / n_shots).sqrt();
    let spec = GridSpec::new(
        TRUTH_A - half_sigmas * sigma_a,
        TRUTH_A + half_sigmas * sigma_a,
        count,
        TRUTH_V - half_sigmas * sigma_v,
        TRUTH_V + half_sigmas * sigma_v,
        count,
    )
    .unwrap();
    let config = GridBuildConfig {
        n_max: N_MAX,
        q: 0.0,
        steps_per_segment: STEPS,
        prep_depth_er: TRUTH_V,
    };
    build_likelihood_grid(&probe_protocol(), &spec, &config, scales, None).unwrap()
}

fn log_density_at(posterior: &PosteriorGrid, grid: &LikelihoodGrid, i: usize, j: usize) -> f64 {
    posterior.log_density[i * grid.v_count() + j]
}

#[test]
fn sampled_outcome_frequencies_match_the_grid_distribution() {
    let scales = PhysicalScales::rubidium_87();
    let info = truth_cfim(&scales);
    let grid = adaptive_grid(&info, 1e3, 6.0, 5, &scales);
    let (ti, tj) = grid.locate(&truth()).unwrap();
    let probs = grid.row(ti, tj);

    let n = 100_000usize;
    let record = sample_record(&grid, &truth(), n, 77).unwrap();
    let mut counts = vec![0u64; probs.len()];
    for &o in &record.outcomes {
        counts[o] += 1;
    }

    // Chi-squared over outcomes with a healthy expected count.
    let mut statistic = 0.0;
    let mut dof = 0usize;
    for (idx, &p) in probs.iter().enumerate() {
        let expected = p * n as f64;
        if expected >= 10.0 {
            let diff = counts[idx] as f64 - expected;
            statistic += diff * diff / expected;
            dof += 1;
        }
    }
    assert!(dof > 3, "probe distribution should populate several teeth");
    let chi = ChiSquared::new((dof - 1) as f64).unwrap();
    let p_value = 1.0 - chi.cdf(statistic);
    assert!(
        p_value > 0.01,
        "chi-squared statistic {statistic:.1} over {dof} outcomes gives p = {p_value:.4}"
    );
}

#[test]
fn local_log_posterior_curvature_matches_the_fisher_information() {
    let scales = PhysicalScales::rubidium_87();
    let info = truth_cfim(&scales);
    let n_shots = 1000usize;
    let count = 41usize;
    let grid = adaptive_grid(&info, n_shots as f64, 6.0, count, &scales);
    let (ti, tj) = grid.locate(&truth()).unwrap();
    assert_eq!((ti, tj), (count / 2, count / 2));

    let da = grid.a_over_g(ti + 1) - grid.a_over_g(ti);
    let dv = grid.depth_er(tj + 1) - grid.depth_er(tj);
    // Offsets just under one posterior standard deviation: the symmetrized
    // differences below cancel the linear score term, so the stochastic
    // error stays small even this close to the peak, and the quadratic
    // expansion holds in the anharmonic depth direction.
    let k = 3usize;

    // Directions (in grid cells) and the predicted quadratic forms.
    let cases = [
        ((k as isize, 0isize), info[(0, 0)] * (k as f64 * da).powi(2)),
        ((0, k as isize), info[(1, 1)] * (k as f64 * dv).powi(2)),
        (
            (k as isize, k as isize),
            info[(0, 0)] * (k as f64 * da).powi(2)
                + 2.0 * info[(0, 1)] * (k as f64 * da) * (k as f64 * dv)
                + info[(1, 1)] * (k as f64 * dv).powi(2),
        ),
    ];

    let records = 100;
    let prior = PosteriorGrid::flat(&grid);
    let mut sums = [0.0f64; 3];
    for seed in 0..records {
        let record = sample_record(&grid, &truth(), n_shots, 1000 + seed).unwrap();
        let posterior = update_posterior(&prior, &record, &grid).unwrap();
        for (slot, ((di, dj), _)) in cases.iter().enumerate() {
            let plus = log_density_at(
                &posterior,
                &grid,
                (ti as isize + di) as usize,
                (tj as isize + dj) as usize,
            );
            let minus = log_density_at(
                &posterior,
                &grid,
                (ti as isize - di) as usize,
                (tj as isize - dj) as usize,
            );
            let center = log_density_at(&posterior, &grid, ti, tj);
            // Symmetrized difference cancels the linear score term, whose
            // fluctuation would otherwise swamp a 100-record average.
            sums[slot] += 0.5 * (plus + minus) - center;
        }
    }

    for (slot, ((di, dj), quadratic)) in cases.iter().enumerate() {
        let averaged = sums[slot] / records as f64;
        let predicted = -0.5 * n_shots as f64 * quadratic;
        let relative = (averaged - predicted).abs() / predicted.abs();
        assert!(
            relative < 0.15,
            "direction ({di},{dj}): averaged tilt {averaged:.3} vs quadratic prediction \
             {predicted:.3} (rel {relative:.3})"
        );
    }
}

#[test]
fn posterior_covariance_respects_the_cramer_rao_bound() {
    let scales = PhysicalScales::rubidium_87();
    let info = truth_cfim(&scales);
    let inv = info.try_inverse().unwrap();
    let n_shots = 10_000usize;
    let grid = adaptive_grid(&info, 1e3, 6.0, 41, &scales);
    let prior = PosteriorGrid::flat(&grid);

    let records = 100;
    let mut mean_cov = Matrix2::zeros();
    for seed in 0..records {
        let record = sample_record(&grid, &truth(), n_shots, 500 + seed).unwrap();
        let posterior = update_posterior(&prior, &record, &grid).unwrap();
        mean_cov += posterior_moments(&posterior).covariance;
    }
    mean_cov /= records as f64;

    let gap = mean_cov * n_shots as f64 - inv;
    let norm = inv[(0, 0)].abs().max(inv[(1, 1)].abs());
    let min_eig = min_eigenvalue_2x2(&gap);
    assert!(
        min_eig >= -0.10 * norm,
        "N*cov undershoots the inverse information: min eig {min_eig:.3e} vs \
         allowance {:.3e}",
        -0.10 * norm
    );
}

#[test]
fn posterior_width_scales_as_the_inverse_root_of_the_shot_count() {
    let scales = PhysicalScales::rubidium_87();
    let info = truth_cfim(&scales);
    let grid = adaptive_grid(&info, 1e3, 6.0, 41, &scales);
    let prior = PosteriorGrid::flat(&grid);

    let seeds = 20;
    let mut ratio_sum = 0.0;
    for seed in 0..seeds {
        let coarse = sample_record(&grid, &truth(), 1_000, 9000 + seed).unwrap();
        let fine = sample_record(&grid, &truth(), 10_000, 9500 + seed).unwrap();
        let sigma_coarse = posterior_moments(&update_posterior(&prior, &coarse, &grid).unwrap())
            .covariance[(0, 0)]
            .sqrt();
        let sigma_fine = posterior_moments(&update_posterior(&prior, &fine, &grid).unwrap())
            .covariance[(0, 0)]
            .sqrt();
        ratio_sum += sigma_coarse / sigma_fine;
    }
    let mean_ratio = ratio_sum / seeds as f64;
    let expected = 10.0f64.sqrt();
    assert!(
        (mean_ratio - expected).abs() < 0.2 * expected,
        "sigma(1e3)/sigma(1e4) = {mean_ratio:.3}, expected {expected:.3} within 20%"
    );
}

#[test]
fn maximum_likelihood_lands_within_one_cell_of_the_truth() {
    let scales = PhysicalScales::rubidium_87();
    let info = truth_cfim(&scales);
    let n_shots = 10_000usize;
    // Cells of roughly two posterior standard deviations at this shot count.
    let grid = adaptive_grid(&info, n_shots as f64, 30.0, 31, &scales);
    let (ti, tj) = grid.locate(&truth()).unwrap();
    let prior = PosteriorGrid::flat(&grid);

    let seeds = 20;
    let mut hits = 0;
    for seed in 0..seeds {
        let record = sample_record(&grid, &truth(), n_shots, 300 + seed).unwrap();
        let posterior = update_posterior(&prior, &record, &grid).unwrap();
        let estimate = mle(&posterior);
        let (ei, ej) = grid.locate(&estimate).unwrap();
        if ei.abs_diff(ti) <= 1 && ej.abs_diff(tj) <= 1 {
            hits += 1;
        }
    }
    assert!(
        hits > seeds / 2,
        "MLE within one cell of the truth in only {hits} of {seeds} records"
    );
}
