fn main() {
    std::process::exit(polctl::cli::run());
}
