fn main() {
    std::process::exit(bnpwmar::cli::main_with_args(std::env::args_os()));
}
