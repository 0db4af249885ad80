fn main() {
    std::process::exit(ntk_active_cli::run_cli(std::env::args()));
}
