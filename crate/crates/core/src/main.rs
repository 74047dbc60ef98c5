fn main() {
    std::process::exit(bregflow::cli::main());
}
