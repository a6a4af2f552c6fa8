fn main() {
    std::process::exit(debias_sgg::cli::run(std::env::args_os()));
}
