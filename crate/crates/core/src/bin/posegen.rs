fn main() {
    std::process::exit(posegen::cli::execute(std::env::args_os()));
}
