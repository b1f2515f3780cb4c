fn main() {
    std::process::exit(conflation_core::cli::run(std::env::args_os()));
}
