fn main() {
    std::process::exit(sensprune::cli::run(std::env::args_os()));
}
