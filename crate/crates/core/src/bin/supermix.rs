fn main() {
    std::process::exit(supermix::cli::run(std::env::args_os()));
}
