fn main() {
    std::process::exit(dvps::cli::run(std::env::args_os()));
}
