use std::io;

fn main() {
    let code = bearing_formation::cli::run(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
