fn main() {
    let code = poissonprop::cli::main_with_args(std::env::args_os());
    std::process::exit(code);
}
