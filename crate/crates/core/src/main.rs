fn main() {
    std::process::exit(fdwedge::cli::run(std::env::args_os()));
}
