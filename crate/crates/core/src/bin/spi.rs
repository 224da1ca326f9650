fn main() -> std::process::ExitCode {
    spi_core::cli::run(std::env::args_os())
}
