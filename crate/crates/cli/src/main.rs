fn main() {
    std::process::exit(pointseg_cli::main_with_args(std::env::args_os()));
}
