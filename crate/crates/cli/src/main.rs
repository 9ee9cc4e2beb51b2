use clap::Parser;
use ppk_cli::args::Cli;
use ppk_cli::{run, RunOptions};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap's own usage errors exit with 2, which is reserved for numerical failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = cli.command.to_spec().and_then(|(spec, resume)| {
        let outcome = run(
            &spec,
            RunOptions {
                resume,
                stop_after: None,
            },
        )?;
        log::info!("{} points written to {}", outcome.written, spec.out.display());
        Ok(())
    });
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
