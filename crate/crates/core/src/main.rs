fn main() {
    std::process::exit(wordfactors::cli::main_with_args(std::env::args_os()));
}
