fn main() {
    std::process::exit(gne_seek::cli::main_with(std::env::args_os()));
}
