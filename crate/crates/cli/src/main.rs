use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let outcome = euler_embed_cli::run_args(std::env::args_os());
    let mut stdout = std::io::stdout().lock();
    if stdout
        .write_all(outcome.body.as_bytes())
        .and_then(|_| stdout.flush())
        .is_err()
    {
        return ExitCode::from(2);
    }
    if let Some(msg) = &outcome.message {
        eprintln!("{}", msg.trim_end());
    }
    ExitCode::from(outcome.code() as u8)
}
