fn main() {
    std::process::exit(seqreg_cli::run(std::env::args_os()));
}
