fn main() {
    std::process::exit(lsm_core::cli::run(std::env::args_os()));
}
