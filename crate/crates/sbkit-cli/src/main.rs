fn main() {
    std::process::exit(sbkit_cli::run());
}
