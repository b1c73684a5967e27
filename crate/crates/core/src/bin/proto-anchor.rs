fn main() {
    std::process::exit(proto_anchor::cli::run(std::env::args_os()));
}
