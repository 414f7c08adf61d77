fn main() {
    std::process::exit(reflow::cli::run(std::env::args_os()));
}
