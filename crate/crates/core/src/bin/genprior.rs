fn main() {
    std::process::exit(genprior::cli::run(std::env::args_os()));
}
