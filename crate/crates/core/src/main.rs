fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DLPFS_LOG", "warn")).init();
    std::process::exit(dlpfs::cli::main_with(std::env::args_os()));
}
