fn main() {
    std::process::exit(mhenet_cli::run(std::env::args_os()));
}
