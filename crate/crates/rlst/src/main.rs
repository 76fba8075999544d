fn main() {
    let level = std::env::var("RLST_LOG_LEVEL").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();
    std::process::exit(rlst::cli::main_with_args(std::env::args_os()));
}
