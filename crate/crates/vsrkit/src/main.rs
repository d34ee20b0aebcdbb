fn main() {
    std::process::exit(vsrkit::cli::main_exit_code());
}
