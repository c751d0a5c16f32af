fn main() {
    std::process::exit(tsrl::cli::try_main(std::env::args_os()));
}
