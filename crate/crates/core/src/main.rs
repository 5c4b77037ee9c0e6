fn main() {
    scalecs::cli::main();
}
