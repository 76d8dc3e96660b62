fn main() {
    std::process::exit(dnl_cli::run(std::env::args_os()));
}
