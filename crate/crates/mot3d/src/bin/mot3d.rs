fn main() {
    std::process::exit(mot3d::cli::main_with_args(std::env::args_os()));
}
