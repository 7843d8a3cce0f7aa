fn main() {
    std::process::exit(avse::cli::run(std::env::args_os()));
}
