fn main() -> std::process::ExitCode {
    timbrelab::cli::main()
}
