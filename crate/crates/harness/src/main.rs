fn main() {
    std::process::exit(repoport_harness::cli::main_with_args(std::env::args_os()));
}
