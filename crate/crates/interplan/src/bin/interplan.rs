fn main() {
    std::process::exit(interplan::cli::run_cli());
}
