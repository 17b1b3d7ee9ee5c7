fn main() {
    std::process::exit(camforge_cli::run());
}
