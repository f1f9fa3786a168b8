fn main() {
    std::process::exit(mftg_cli::run(std::env::args_os()));
}
