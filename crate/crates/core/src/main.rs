fn main() {
    std::process::exit(s2diff::cli::main_with(std::env::args_os()));
}
