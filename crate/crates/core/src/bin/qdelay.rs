fn main() -> std::process::ExitCode {
    qdelay::cli::main_with_args()
}
