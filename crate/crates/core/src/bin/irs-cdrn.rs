fn main() {
    std::process::exit(irs_cdrn::cli::run(std::env::args_os()));
}
