fn main() {
    std::process::exit(acpo::cli::run(std::env::args_os()));
}
