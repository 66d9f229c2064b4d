//! Jensen-Shannon divergence structure of a protocol's outcome
//! distributions over the acceleration and depth axes.
//!
//! Two parameter points are distinguishable when the divergence between
//! their momentum distributions is large. Near the reference the divergence
//! is quadratic with curvature set by the classical Fisher information, and
//! far away it saturates; the crossover marks the protocol's unambiguous
//! operating range.
//!
//! ```text
//! cargo run --release --example jsd_map
//! ```

use shaken_lattice::bayes::{build_likelihood_grid, GridBuildConfig, GridSpec};
use shaken_lattice::divergence::{
    curvature_check, effective_range, jsd_map, ProfileAxis, RangeOptions, SliceSpec,
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
    let reference = EstimationPoint::new(0.0, 10.0);

    // Momentum distributions over a grid around the reference point.
    let spec = GridSpec::new(-0.06, 0.06, 25, 9.4, 10.6, 25).unwrap();
    let build = GridBuildConfig {
        n_max: file.n_max,
        q: 0.0,
        steps_per_segment: file.steps_per_segment().unwrap(),
        prep_depth_er: reference.depth_er,
    };
    let grid = build_likelihood_grid(&protocol, &spec, &build, &scales, None).unwrap();

    // Divergence of every acceleration pair at the reference depth. The
    // diagonal is zero; the width of the low-divergence band around it is
    // the resolution of a single shot.
    let accel_pairs = jsd_map(&grid, &SliceSpec::AccelPair { v_er: 10.0 }).unwrap();
    println!("acceleration-pair divergence at 10 E_R (bits):");
    print_map_corner(&accel_pairs.x_axis, &accel_pairs.values, 7);

    // Divergence of each grid point against the reference.
    let joint = jsd_map(&grid, &SliceSpec::Joint { reference }).unwrap();
    let peak = joint.values.iter().cloned().fold(0.0, f64::max);
    println!("joint divergence against (0 g, 10 E_R): peak {peak:.4} bits");

    // The curvature of the divergence at its minimum reproduces the
    // classical Fisher information from the augmented state.
    let report = curvature_check(&grid, &reference).unwrap();
    let basis = build_basis(file.n_max, 0.0).unwrap();
    let psi0 = ground_state(reference.depth_er, &basis, 0.0).unwrap();
    let initial = AugmentedState::fresh(psi0, basis).unwrap();
    let settings = SolverSettings::with_steps(file.steps_per_segment().unwrap());
    let out = propagate_augmented(&initial, &protocol, &reference, &scales, &settings).unwrap();
    let direct = cfim(&out.state, PROBABILITY_FLOOR);
    println!("classical Fisher information, curvature fit vs direct:");
    for (label, row, col) in [("I_aa", 0, 0), ("I_aV", 0, 1), ("I_VV", 1, 1)] {
        let fitted = report.cfim_estimate[(row, col)];
        let exact = direct[(row, col)];
        println!(
            "  {label}: fitted {fitted:+.6}  direct {exact:+.6}  ratio {:.4}",
            fitted / exact
        );
    }
    println!("  rms fit residual {:.2e} nats", report.rms_residual);

    // Where along the acceleration axis the protocol stops telling
    // neighboring values apart.
    let range = effective_range(
        &grid,
        ProfileAxis::Accel { v_er: 10.0 },
        0.0,
        &RangeOptions::default(),
    )
    .unwrap();
    println!(
        "local information at the reference: {:.3} per g^2",
        range.reference_info
    );
    match (range.boundary_low, range.boundary_high) {
        (Some(lo), Some(hi)) => println!(
            "sensitivity holds over [{lo:+.4}, {hi:+.4}] g before the envelope halves"
        ),
        _ => println!("sensitivity envelope never halves inside the grid"),
    }
}

/// Prints the upper-left `k` by `k` corner of a square row-major map.
fn print_map_corner(axis: &[f64], values: &[f64], k: usize) {
    let n = axis.len();
    print!("  a/g      ");
    for x in axis.iter().take(k) {
        print!(" {x:+.3} ");
    }
    println!();
    for i in 0..k.min(n) {
        print!("  {:+.3}   ", axis[i]);
        for j in 0..k.min(n) {
            print!(" {:.3} ", values[i * n + j]);
        }
        println!();
    }
}
