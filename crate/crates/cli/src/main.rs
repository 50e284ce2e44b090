fn main() {
    std::process::exit(ciatr_cli::run(std::env::args_os()));
}
