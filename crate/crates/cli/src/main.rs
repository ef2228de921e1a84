fn main() {
    std::process::exit(octnet_cli::run(std::env::args_os()));
}
