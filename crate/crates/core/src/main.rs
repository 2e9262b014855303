fn main() {
    std::process::exit(relsum::cli::main())
}
