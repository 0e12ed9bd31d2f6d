fn main() {
    std::process::exit(cross_pseudo_vad::cli::main_with_args(std::env::args_os()));
}
