fn main() {
    std::process::exit(ct3vae::cli::run(std::env::args_os()));
}
