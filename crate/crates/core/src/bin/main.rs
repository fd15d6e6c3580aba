fn main() {
    std::process::exit(sampled_ocp::cli::run(std::env::args_os()));
}
