fn main() {
    std::process::exit(agavescan::cli::run(std::env::args_os()));
}
