//! Closed-form Fisher information for free-falling momentum superpositions,
//! checked against the full propagator at zero lattice depth.
//!
//! A balanced superposition of `|p0>` and `|-p0>` coasting for a time `T`
//! acquires an acceleration-dependent relative phase, with quantum Fisher
//! information `(p0 T^2 / hbar)^2`. This is the yardstick every shaken
//! protocol is measured against: a Mach-Zehnder sequence of the same total
//! duration reaches exactly a quarter of it.
//!
//! ```text
//! cargo run --release --example free_space_oracle
//! ```

use shaken_lattice::dynamics::{propagate_augmented, ControlProtocol, SolverSettings};
use shaken_lattice::estimation::qfim;
use shaken_lattice::freespace::{
    analytic_accel_qfim, analytic_augmented_state, mzi_fisher, ramsey_fisher, FreeSpaceScenario,
};
use shaken_lattice::physcore::{PhysicalScales, HBAR};

fn main() {
    let scales = PhysicalScales::rubidium_87();
    println!(
        "rubidium-87 in a 1064 nm lattice: recoil time {:.3} us",
        scales.seconds_from_tau(1.0) * 1e6
    );
    println!();

    println!("closed-form acceleration QFIM vs full propagation at V = 0:");
    for (comb_order, segments) in [(1usize, 8usize), (2, 8), (1, 32), (2, 32)] {
        // Durations are quantized in half drive periods, so express the
        // coasting time as an idle protocol of whole segments.
        let idle = ControlProtocol::idle(segments);
        let scenario = FreeSpaceScenario {
            comb_order,
            a_over_g: 0.05,
            total_tau: idle.total_tau(),
        };
        let analytic = analytic_accel_qfim(&scenario, &scales);

        // Propagate the same superposition numerically in a zero-depth
        // lattice; only the acceleration row of the QFIM is meaningful.
        let initial = analytic_augmented_state(
            &FreeSpaceScenario {
                total_tau: 0.0,
                ..scenario
            },
            &scales,
        )
        .unwrap();
        let out = propagate_augmented(
            &initial,
            &idle,
            &scenario.point(),
            &scales,
            &SolverSettings::with_steps(1024),
        )
        .unwrap();
        let numerical = qfim(&out.state)[(0, 0)];
        let rel = ((numerical - analytic) / analytic).abs();
        println!(
            "  p0 = {} hbar k_L, T = {:6.2} recoil times ({:4.0} us): analytic {:.6e}, propagated {:.6e}, rel {:.2e}",
            2 * comb_order,
            scenario.total_tau,
            scales.seconds_from_tau(scenario.total_tau) * 1e6,
            analytic,
            numerical,
            rel
        );
    }
    println!();

    println!("Ramsey versus Mach-Zehnder at equal duration (SI units):");
    let p0 = 4.0 * HBAR * scales.k_l;
    for t in [100e-6, 684e-6] {
        let ramsey = ramsey_fisher(p0, t);
        let mzi = mzi_fisher(p0, t);
        println!(
            "  T = {:.0} us: Ramsey {:.4e}, MZI {:.4e}, ratio {}",
            t * 1e6,
            ramsey,
            mzi,
            ramsey / mzi
        );
    }
}
