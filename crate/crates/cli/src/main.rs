fn main() {
    std::process::exit(listen_cli::run(std::env::args_os()));
}
