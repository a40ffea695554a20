fn main() {
    std::process::exit(sinofill::cli::run(std::env::args_os()));
}
