fn main() -> std::process::ExitCode {
    edgewatt::cli::main()
}
