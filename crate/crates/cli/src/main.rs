fn main() {
    std::process::exit(splitkit_cli::main_with_args(std::env::args_os()));
}
