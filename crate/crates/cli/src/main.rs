fn main() {
    std::process::exit(countbox_cli::run(std::env::args_os()));
}
