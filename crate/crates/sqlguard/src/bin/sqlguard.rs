fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SQLGUARD_LOG", "warn"))
        .init();
    std::process::exit(sqlguard::cli::run(std::env::args_os()));
}
