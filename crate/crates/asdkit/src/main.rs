fn main() {
    std::process::exit(asdkit::cli::run());
}
