fn main() {
    std::process::exit(fhtw_core::cli::run(std::env::args_os()));
}
