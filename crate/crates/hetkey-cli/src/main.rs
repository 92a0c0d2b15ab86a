//! Command-line entry point for key-rate sweeps.

fn main() {
    hetkey_cli::cli_main();
}
