fn main() {
    aurk::cli::run_main();
}
