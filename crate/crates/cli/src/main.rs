fn main() {
    if let Err(e) = lowprec_cli::main_with_args(std::env::args_os().collect()) {
        eprintln!("{}", e.to_json_line());
        std::process::exit(e.exit_code());
    }
}
