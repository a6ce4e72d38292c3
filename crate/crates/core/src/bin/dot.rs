fn main() {
    std::process::exit(dotsim::cli::main_with_args(std::env::args_os()));
}
