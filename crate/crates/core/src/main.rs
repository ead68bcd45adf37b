fn main() {
    std::process::exit(fishform::cli::run(std::env::args_os()));
}
