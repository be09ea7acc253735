fn main() {
    std::process::exit(ppt::cli::run());
}
