fn main() {
    std::process::exit(aftmc::cli::cli_main(std::env::args_os()));
}
