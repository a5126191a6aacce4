fn main() {
    std::process::exit(photoenhance::cli::run(std::env::args_os()));
}
