fn main() {
    std::process::exit(dell::cli::main_with_args(std::env::args_os()));
}
