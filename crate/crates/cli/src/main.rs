fn main() {
    std::process::exit(geoflow_cli::main_with(std::env::args_os()));
}
