fn main() {
    std::process::exit(layergibbs::cli_main());
}
