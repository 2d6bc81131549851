fn main() {
    std::process::exit(numdev::cli::run(std::env::args_os()));
}
