fn main() {
    std::process::exit(srl4h::cli::run_from(std::env::args_os()));
}
