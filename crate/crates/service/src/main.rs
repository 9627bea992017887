fn main() -> std::process::ExitCode {
    tapmobo_service::cli::main()
}
