fn main() {
    std::process::exit(adkit::cli::cli_dispatch(std::env::args_os()));
}
