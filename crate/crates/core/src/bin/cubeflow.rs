fn main() {
    std::process::exit(cubeflow::harness::cli::run(std::env::args_os()));
}
