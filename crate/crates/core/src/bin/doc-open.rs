fn main() {
    std::process::exit(doc_open::cli::main_with_args(std::env::args_os()));
}
