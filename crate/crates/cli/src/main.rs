fn main() {
    std::process::exit(glioseg_cli::run(std::env::args_os()));
}
