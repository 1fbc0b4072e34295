fn main() {
    std::process::exit(rsel::cli::main_with_args(std::env::args_os()));
}
