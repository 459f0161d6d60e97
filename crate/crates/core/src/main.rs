fn main() {
    std::process::exit(kgqv::harness::cli_main(std::env::args_os()));
}
