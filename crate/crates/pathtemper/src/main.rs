fn main() {
    std::process::exit(pathtemper::cli::run_cli(std::env::args_os()));
}
