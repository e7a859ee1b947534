fn main() {
    std::process::exit(crowdfer::cli::run());
}
