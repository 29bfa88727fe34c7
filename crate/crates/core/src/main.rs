fn main() {
    std::process::exit(qwalk::cli::main_with_args(std::env::args_os()));
}
