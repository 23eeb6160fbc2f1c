fn main() {
    std::process::exit(simrec::cli::run(std::env::args_os()));
}
