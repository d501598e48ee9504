fn main() {
    std::process::exit(irispad::cli::run(std::env::args_os()));
}
