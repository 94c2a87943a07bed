fn main() {
    std::process::exit(lw_core::cli::main_with_args(std::env::args_os()));
}
