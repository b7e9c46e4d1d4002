fn main() {
    std::process::exit(bwsl_cli::run(std::env::args_os()));
}
