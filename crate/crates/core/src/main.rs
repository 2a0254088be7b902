fn main() {
    let code = obsv::cli::run(std::env::args_os());
    std::process::exit(code);
}
