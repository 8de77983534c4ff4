fn main() {
    std::process::exit(adapcr::cli::run());
}
