fn main() {
    std::process::exit(clipdesk_cli::run(std::env::args_os()));
}
