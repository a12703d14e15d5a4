fn main() {
    std::process::exit(oilcurve::cli::run(std::env::args_os()));
}
