fn main() {
    std::process::exit(margnet::cli::run(std::env::args_os()));
}
