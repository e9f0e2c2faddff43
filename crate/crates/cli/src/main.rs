fn main() {
    std::process::exit(robustkit_cli::main_with_args(std::env::args_os()));
}
