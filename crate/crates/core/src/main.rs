fn main() {
    std::process::exit(attn_thermo::cli::run(std::env::args_os()));
}
