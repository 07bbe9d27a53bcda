fn main() {
    hava_cli::tune_allocator();
    std::process::exit(hava_cli::run_cli(std::env::args_os()));
}
