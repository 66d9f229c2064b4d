//! Shaken-lattice interferometry toolkit: quantum dynamics, Fisher-information
//! analysis, Bayesian readout, and reinforcement-learning protocol design for
//! an atom trapped in a phase-modulated optical lattice.
//!
//! The lattice phase is piecewise-sinusoidally shaken; the resulting momentum
//! distribution encodes both an applied acceleration and the lattice depth.
//! This crate propagates the atomic state together with its parameter
//! derivatives, turns measurement statistics into classical and quantum Fisher
//! information, trains a double-deep-Q designer that rewards protocols whose
//! acceleration estimate decouples from lattice-depth uncertainty, and checks
//! the resulting likelihoods with Bayesian inference and Jensen-Shannon
//! divergence maps.
//!
//! Every module is exercised by a runnable example:
//!
//! ```text
//! cargo run --release --example free_space_oracle    # closed-form Fisher information checks
//! cargo run --release --example bloch_bands          # lattice band structure
//! cargo run --release --example propagate_protocol   # time series for a bundled protocol
//! cargo run --release --example fisher_report        # CFIM/QFIM and sensitivity summary
//! cargo run --release --example train_designer       # short Q-learning run
//! cargo run --release --example bayesian_update      # posterior sharpening with shot count
//! cargo run --release --example jsd_map              # divergence maps and effective range
//! ```
//!
//! All internal computation uses lattice recoil units (energies in units of
//! the photon recoil energy, times in inverse recoil frequencies, momenta in
//! photon recoil momenta, accelerations in units of standard gravity). SI
//! values appear only at I/O boundaries, converted through
//! [`physcore::PhysicalScales`].

pub mod bayes;
pub mod cli;
pub mod designer;
pub mod divergence;
pub mod dynamics;
pub mod estimation;
pub mod freespace;
pub mod physcore;
pub mod protocols;
