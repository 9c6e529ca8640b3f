fn main() {
    std::process::exit(feedopt::cli::run(std::env::args_os()));
}
