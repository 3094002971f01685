fn main() {
    std::process::exit(jnd_cli::main_with_args(std::env::args_os()));
}
