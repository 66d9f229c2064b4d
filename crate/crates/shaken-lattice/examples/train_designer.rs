//! Short double-deep-Q training run on a reduced environment.
//!
//! The agent picks one shaking amplitude per half drive period and is
//! rewarded by how much acceleration information the final state carries
//! once lattice-depth uncertainty is marginalized out. Protocols that dump
//! more than a few percent of the population past 4 recoil momenta earn
//! nothing, so the agent must excite the atom coherently, not just violently.
//!
//! Full-size designs use 32 segments and thousands of episodes; this
//! example shrinks the episode to 16 segments on a smaller momentum comb so
//! a complete run takes seconds and still beats the unshaken protocol.
//!
//! ```text
//! cargo run --release --example train_designer
//! ```

use shaken_lattice::designer::{train, EnvConfig, Hyperparameters, RewardKind};
use shaken_lattice::physcore::PhysicalScales;

fn main() {
    let scales = PhysicalScales::rubidium_87();
    let env = EnvConfig {
        segments: 16,
        n_max: 8,
        reward: RewardKind::AccelMarginal,
        ..EnvConfig::default()
    };
    let hyper = Hyperparameters {
        episodes: 300,
        epsilon_decay: 4e-4,
        train_steps_per_episode: 4,
        seed: 7,
        ..Hyperparameters::default()
    };

    println!(
        "training {} episodes of {} segments (drive at {} recoil frequencies)...",
        hyper.episodes, env.segments, env.omega_s_over_omega_r
    );
    let run = train(&env, &hyper, &scales).unwrap();

    println!();
    println!("reward trace (100-episode windows):");
    for window in run.history.chunks(100) {
        let accepted = window.iter().filter(|r| !r.rejected).count();
        let best = window.iter().map(|r| r.reward).fold(0.0, f64::max);
        let first = window.first().unwrap().episode;
        let last = window.last().unwrap().episode;
        println!(
            "  episodes {first:>3}-{last:>3}: accepted {accepted:>3}/{:>3}, best reward {best:.4}",
            window.len()
        );
    }

    println!();
    println!(
        "best protocol (reward {:.4}, episode {}):",
        run.best_reward, run.best_episode
    );
    let amplitudes: Vec<String> = run
        .best_protocol
        .segment_amplitudes
        .iter()
        .map(|a| format!("{a:.3}"))
        .collect();
    println!("  amplitudes [rad]: {}", amplitudes.join(" "));
    println!(
        "  discarded episodes (runaway propagation): {}",
        run.discarded_episodes.len()
    );
}
