use workflow_ql::cli::{run, Env};

fn main() {
    let code = run(
        std::env::args_os(),
        &Env::from_process(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    std::process::exit(code);
}
