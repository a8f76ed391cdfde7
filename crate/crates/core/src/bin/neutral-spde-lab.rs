fn main() {
    std::process::exit(neutral_spde_lab::cli::main_with_args(std::env::args_os()));
}
