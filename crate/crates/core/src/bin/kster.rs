fn main() {
    std::process::exit(kster::evalbench::cli::run(std::env::args_os()));
}
