fn main() {
    std::process::exit(gesturelab::cli::main_with_args(std::env::args_os()));
}
