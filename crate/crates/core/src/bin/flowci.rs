fn main() {
    std::process::exit(flowci::cli::run(std::env::args_os()));
}
