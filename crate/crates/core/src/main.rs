fn main() -> std::process::ExitCode {
    hyperbolic_sff::cli::main()
}
