fn main() {
    std::process::exit(catpose::cli::main_exit_code());
}
