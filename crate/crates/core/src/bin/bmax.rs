fn main() {
    std::process::exit(bmax::cli::run_cli(std::env::args_os()));
}
