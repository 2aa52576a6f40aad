fn main() {
    std::process::exit(hypertopic::cli::run(std::env::args_os()));
}
