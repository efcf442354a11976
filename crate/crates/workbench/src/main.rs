fn main() -> std::process::ExitCode {
    realign_workbench::cli::main()
}
