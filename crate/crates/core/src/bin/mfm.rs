fn main() {
    std::process::exit(mfm::cli::main_with(std::env::args_os()));
}
