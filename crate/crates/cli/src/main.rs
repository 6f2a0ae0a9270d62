fn main() {
    std::process::exit(ssmdisc_cli::run_cli(std::env::args_os()));
}
