fn main() {
    std::process::exit(cpt_core::cli::run(std::env::args_os()));
}
