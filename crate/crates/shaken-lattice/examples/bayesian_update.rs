//! Posterior sharpening over acceleration and lattice depth as momentum
//! measurements accumulate.
//!
//! Builds the likelihood of every momentum outcome over a parameter grid for
//! the bundled reference protocol, draws synthetic shots at a hidden truth,
//! and feeds them to a Bayesian update. The posterior width should shrink as
//! `1/sqrt(N)` toward the rate set by the classical Fisher information.
//!
//! ```text
//! cargo run --release --example bayesian_update
//! ```

use shaken_lattice::bayes::{
    build_likelihood_grid, mle, posterior_moments, sample_record, update_posterior,
    GridBuildConfig, GridSpec, MeasurementRecord, PosteriorGrid,
};
use shaken_lattice::dynamics::{
    propagate_augmented, AugmentedState, EstimationPoint, SolverSettings,
};
use shaken_lattice::estimation::{cfim, PROBABILITY_FLOOR};
use shaken_lattice::physcore::{build_basis, ground_state, PhysicalScales};
use shaken_lattice::protocols;

fn main() {
    let scales = PhysicalScales::rubidium_87();
    let file = protocols::reference();
    let protocol = file.control_protocol().unwrap();
    let truth = EstimationPoint::new(0.0, 10.0);

    // What the augmented state predicts for the error floor.
    let basis = build_basis(file.n_max, 0.0).unwrap();
    let psi0 = ground_state(truth.depth_er, &basis, 0.0).unwrap();
    let initial = AugmentedState::fresh(psi0, basis).unwrap();
    let settings = SolverSettings::with_steps(file.steps_per_segment().unwrap());
    let out = propagate_augmented(&initial, &protocol, &truth, &scales, &settings).unwrap();
    let info = cfim(&out.state, PROBABILITY_FLOOR);
    let inverse = info.try_inverse().unwrap();
    println!(
        "classical Fisher information at the truth: I_aa {:.3} per g^2, I_VV {:.4} per E_R^2",
        info[(0, 0)],
        info[(1, 1)]
    );
    println!(
        "single-shot bound from its inverse: sigma_a {:.3} g, sigma_V {:.3} E_R",
        inverse[(0, 0)].sqrt(),
        inverse[(1, 1)].sqrt()
    );
    println!();

    println!("building the likelihood grid...");
    let spec = GridSpec::new(-0.1, 0.1, 41, 9.0, 11.0, 41).unwrap();
    let build = GridBuildConfig {
        n_max: file.n_max,
        q: 0.0,
        steps_per_segment: file.steps_per_segment().unwrap(),
        prep_depth_er: 10.0,
    };
    let grid = build_likelihood_grid(&protocol, &spec, &build, &scales, None).unwrap();

    let shots = 2000;
    let record = sample_record(&grid, &truth, shots, 4242).unwrap();
    let prior = PosteriorGrid::flat(&grid);

    println!();
    println!(
        "{:>6} {:>12} {:>10} {:>10} {:>14} {:>12}",
        "shots", "mean a [g]", "sig a [g]", "sig V [ER]", "sig a sqrt(N)", "MLE a [g]"
    );
    for n in [10usize, 50, 200, 1000, 2000] {
        let partial = MeasurementRecord {
            outcomes: record.outcomes[..n].to_vec(),
            truth,
            seed: record.seed,
        };
        let posterior = update_posterior(&prior, &partial, &grid).unwrap();
        let moments = posterior_moments(&posterior);
        let sigma_a = moments.covariance[(0, 0)].sqrt();
        let sigma_v = moments.covariance[(1, 1)].sqrt();
        let peak = mle(&posterior);
        println!(
            "{:>6} {:>12.5} {:>10.5} {:>10.5} {:>14.4} {:>12.5}",
            n,
            moments.mean_a_over_g,
            sigma_a,
            sigma_v,
            sigma_a * (n as f64).sqrt(),
            peak.a_over_g
        );
    }
    println!();
    println!(
        "sigma_a sqrt(N) should approach sqrt((I^-1)_aa) = {:.4} g as N grows",
        inverse[(0, 0)].sqrt()
    );
}
