fn main() -> std::process::ExitCode {
    pconvex::cli::main()
}
