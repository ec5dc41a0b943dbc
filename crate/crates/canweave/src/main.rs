fn main() {
    std::process::exit(canweave::cli::run());
}
