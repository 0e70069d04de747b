fn main() {
    std::process::exit(hcc_cli::run(std::env::args_os()));
}
