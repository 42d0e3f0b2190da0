fn main() {
    std::process::exit(amodal_kit::cli::main())
}
