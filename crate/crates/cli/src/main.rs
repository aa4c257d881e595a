fn main() {
    std::process::exit(metapop_cli::run(std::env::args_os()));
}
