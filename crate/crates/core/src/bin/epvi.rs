fn main() {
    std::process::exit(epvi::cli::run(std::env::args_os()));
}
