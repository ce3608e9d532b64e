fn main() -> std::process::ExitCode {
    beltpick::cli::main_with_args(std::env::args_os())
}
