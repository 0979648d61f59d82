fn main() {
    std::process::exit(pcaids::cli::run(std::env::args_os()));
}
