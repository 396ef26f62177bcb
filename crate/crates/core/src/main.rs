fn main() {
    std::process::exit(cmsa_bip::cli::main_with_args(std::env::args_os()));
}
