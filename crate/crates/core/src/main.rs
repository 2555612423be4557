fn main() {
    std::process::exit(trustledger::cli::main());
}
