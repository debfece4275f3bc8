fn main() {
    std::process::exit(repdisc::cli::run(std::env::args_os()));
}
