fn main() {
    if let Err(e) = ctrlc::set_handler(leads_kit::cli::interrupt) {
        eprintln!("leads-kit: cannot install Ctrl-C handler: {e}");
    }
    std::process::exit(leads_kit::cli::main_with_args(std::env::args_os()));
}
