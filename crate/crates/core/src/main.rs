fn main() {
    std::process::exit(stmamba::cli::run(std::env::args_os()));
}
