fn main() {
    std::process::exit(kahler_moduli::cli::run(std::env::args_os()));
}
