fn main() {
    std::process::exit(sbim_cli::main_with_args(std::env::args_os()));
}
