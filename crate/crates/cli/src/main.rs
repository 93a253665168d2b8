fn main() {
    std::process::exit(omapl_cli::run(std::env::args_os()));
}
