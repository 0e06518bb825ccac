fn main() {
    std::process::exit(hemenet::cli::main_from(std::env::args_os()));
}
