fn main() -> std::process::ExitCode {
    lfi_fmcw::cli::main_exit()
}
