fn main() {
    std::process::exit(domaingap::cli::dispatch(std::env::args_os()));
}
