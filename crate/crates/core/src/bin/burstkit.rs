fn main() {
    std::process::exit(burstkit::cli::main_with_args(std::env::args_os()));
}
