fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FUSETRACK_LOG", "info")).init();
    std::process::exit(fusetrack::cli::run(std::env::args_os()));
}
