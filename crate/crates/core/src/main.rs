fn main() {
    std::process::exit(prefsim::cli::run(std::env::args_os()));
}
