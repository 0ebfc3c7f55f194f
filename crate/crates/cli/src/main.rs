fn main() {
    std::process::exit(qc_cli::run(std::env::args_os()));
}
