fn main() {
    std::process::exit(cutin_core::cli::main_with_args(std::env::args_os()));
}
