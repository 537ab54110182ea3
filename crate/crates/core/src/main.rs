fn main() {
    std::process::exit(regime_grad::harness::cli::run(std::env::args_os()));
}
