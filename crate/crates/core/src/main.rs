fn main() {
    std::process::exit(fracritz::cli::run(std::env::args_os()));
}
