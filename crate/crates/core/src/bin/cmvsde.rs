fn main() {
    std::process::exit(cmvsde::cli::run(std::env::args_os()));
}
