fn main() {
    std::process::exit(regforge_cli::run(std::env::args_os()));
}
