fn main() {
    std::process::exit(perfect_sampling::cli::run(std::env::args_os()));
}
