fn main() {
    std::process::exit(draovg::cli::run(std::env::args_os()));
}
