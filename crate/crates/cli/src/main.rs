fn main() {
    std::process::exit(fmm2d_cli::run());
}
