//! Band structure of the optical lattice across its Brillouin zone.
//!
//! Diagonalizes the lattice Hamiltonian on the plane-wave comb for a few
//! depths and prints the lowest bands. The gaps at the zone center and edge
//! set which shaking frequencies can move population between bands, and the
//! flatness of the valence bands is what suppresses transport at large
//! depth.
//!
//! ```text
//! cargo run --release --example bloch_bands
//! ```

use shaken_lattice::physcore::{bloch_diagonalize, build_basis, ground_state};

fn main() {
    let n_max = 10;
    let bands = 5;

    for depth_er in [5.0, 10.0, 15.0] {
        println!("lattice depth {depth_er} recoil energies:");
        println!("  {:>6} {}", "q", "lowest band energies (recoil units)");
        // The Brillouin zone is the half-open interval [-1, 1).
        for i in 0..8 {
            let q = -1.0 + 0.25 * i as f64;
            let basis = build_basis(n_max, q).unwrap();
            let decomposition = bloch_diagonalize(depth_er, &basis, 0.0).unwrap();
            let row: Vec<String> = decomposition
                .energies
                .iter()
                .take(bands)
                .map(|e| format!("{e:8.3}"))
                .collect();
            println!("  {:>6.2} {}", q, row.join(" "));
        }

        let basis = build_basis(n_max, 0.0).unwrap();
        let decomposition = bloch_diagonalize(depth_er, &basis, 0.0).unwrap();
        let e = &decomposition.energies;
        println!(
            "  zone-center gaps: 0->1 {:.3}, 1->2 {:.3}, 2->3 {:.3}, 3->4 {:.3}",
            e[1] - e[0],
            e[2] - e[1],
            e[3] - e[2],
            e[4] - e[3]
        );

        let ground = ground_state(depth_er, &basis, 0.0).unwrap();
        let occupations: Vec<String> = (0..basis.dim())
            .filter(|&i| basis.order(i).abs() <= 2)
            .map(|i| {
                format!(
                    "p={:+.0}: {:.4}",
                    basis.momentum(i),
                    ground.amplitudes[i].norm_sqr()
                )
            })
            .collect();
        println!("  ground-state momentum occupations: {}", occupations.join("  "));
        println!();
    }
}
