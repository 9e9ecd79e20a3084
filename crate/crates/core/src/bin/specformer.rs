fn main() {
    std::process::exit(specformer::cli::run(std::env::args_os()));
}
