fn main() {
    std::process::exit(dcaseg::cli::main_with_args(std::env::args_os()));
}
