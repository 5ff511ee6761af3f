fn main() {
    std::process::exit(aiano_server::cli::run(std::env::args_os()));
}
