fn main() {
    std::process::exit(dgvi::cli::run(std::env::args_os()));
}
