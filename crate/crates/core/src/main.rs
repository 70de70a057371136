fn main() {
    if let Err(e) = cyst::cli::run(std::env::args_os()) {
        eprintln!("error: {e}");
        std::process::exit(cyst::cli::exit_code(&e));
    }
}
