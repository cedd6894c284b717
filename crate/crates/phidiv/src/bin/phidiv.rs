fn main() {
    std::process::exit(phidiv::cli::run());
}
