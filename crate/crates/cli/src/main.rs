fn main() {
    std::process::exit(epistitch_cli::run_cli(std::env::args_os()));
}
