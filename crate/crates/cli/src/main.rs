fn main() {
    promptknn::init_logging();
    std::process::exit(promptknn::cli::run(std::env::args_os()));
}
