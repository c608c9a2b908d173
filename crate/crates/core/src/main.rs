fn main() {
    std::process::exit(codistill::cli::run(std::env::args_os()));
}
