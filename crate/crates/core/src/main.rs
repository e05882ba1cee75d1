fn main() {
    std::process::exit(pmptrain::cli::dispatch(std::env::args_os()));
}
