fn main() {
    std::process::exit(cru::cli::main_with_args(std::env::args_os()));
}
