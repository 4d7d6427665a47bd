fn main() {
    std::process::exit(freqrestore::cli::run());
}
