fn main() {
    std::process::exit(mccseg::cli::run_cli(std::env::args_os()));
}
