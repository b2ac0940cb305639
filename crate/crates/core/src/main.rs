fn main() {
    std::process::exit(basketrec::cli::run(std::env::args()));
}
