fn main() {
    std::process::exit(prnu_forge::cli::run(std::env::args_os()));
}
