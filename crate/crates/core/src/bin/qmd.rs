fn main() {
    std::process::exit(qmd::cli::run(std::env::args_os()));
}
