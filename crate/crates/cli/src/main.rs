fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let out = &mut std::io::stdout().lock();
    let err = &mut std::io::stderr();
    let code = replicator_cli::run_with(std::env::args_os(), out, err);
    std::process::exit(code);
}
