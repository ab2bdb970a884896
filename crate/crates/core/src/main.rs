fn main() {
    std::process::exit(msb::cli::main_with_args(std::env::args_os()));
}
