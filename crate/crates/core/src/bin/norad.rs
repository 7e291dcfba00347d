fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    norad::compute::configure_from_env();
    std::process::exit(norad::cli::run(std::env::args_os()));
}
