fn main() {
    std::process::exit(dancegen_cli::run(std::env::args_os()));
}
