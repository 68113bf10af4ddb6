fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(pupcast::cli::cli_dispatch(&argv));
}
