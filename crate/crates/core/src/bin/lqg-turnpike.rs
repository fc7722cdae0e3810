fn main() {
    std::process::exit(lqg_turnpike::cli::run(std::env::args_os()));
}
