fn main() {
    std::process::exit(poslab_cli::main_with_args(std::env::args_os()));
}
