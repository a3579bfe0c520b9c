fn main() {
    std::process::exit(polqed::cli::main_with_args(std::env::args_os()));
}
