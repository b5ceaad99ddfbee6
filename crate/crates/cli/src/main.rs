fn main() {
    std::process::exit(denoisenet_cli::run(std::env::args_os()));
}
