fn main() {
    std::process::exit(mergesim::cli::main_with_args(std::env::args_os()));
}
