fn main() {
    std::process::exit(flarecdr_cli::main_with_args(std::env::args_os()));
}
