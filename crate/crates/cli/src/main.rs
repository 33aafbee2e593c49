fn main() {
    std::process::exit(amplitude_flow_cli::run(std::env::args_os()));
}
