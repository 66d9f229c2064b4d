fn main() {
    std::process::exit(shaken_lattice::cli::run());
}
