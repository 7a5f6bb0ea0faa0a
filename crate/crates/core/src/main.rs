fn main() {
    std::process::exit(mar_rppg::cli::run(std::env::args_os()));
}
