fn main() {
    std::process::exit(capcal_cli::run(std::env::args_os()));
}
