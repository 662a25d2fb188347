fn main() {
    std::process::exit(collapse_lab::cli::run(std::env::args_os()));
}
