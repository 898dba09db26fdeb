fn main() {
    std::process::exit(phasehit::cli::run(std::env::args_os()));
}
