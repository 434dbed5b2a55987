fn main() {
    std::process::exit(lcqsim::cli::main_with_args(std::env::args_os()));
}
