fn main() {
    std::process::exit(mixact::cli::run(std::env::args_os()));
}
