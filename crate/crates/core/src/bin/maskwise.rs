fn main() {
    std::process::exit(maskwise::cli::dispatch(std::env::args_os()));
}
