fn main() {
    std::process::exit(proxal::cli::main_with_args(std::env::args_os()));
}
