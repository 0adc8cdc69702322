fn main() {
    std::process::exit(snmode::cli::main());
}
