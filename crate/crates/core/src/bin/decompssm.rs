fn main() -> std::process::ExitCode {
    decomp_ssm::cli::run(std::env::args_os())
}
