fn main() {
    std::process::exit(nnarx::cli::run_from(std::env::args_os()));
}
