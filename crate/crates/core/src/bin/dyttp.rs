fn main() {
    std::process::exit(dyttp::cli::run_from(std::env::args_os()));
}
