fn main() {
    std::process::exit(knockoffs::cli::run(std::env::args_os()));
}
