use clap::Parser;
use evsplat_cli::{cmd_eval, cmd_render, cmd_simulate, cmd_train, Command};

/// Event-supervised 3D Gaussian splatting pipeline.
#[derive(Parser)]
#[command(name = "evsplat", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Train(args) => cmd_train(args),
        Command::Render(args) => cmd_render(args),
        Command::Eval(args) => cmd_eval(args).map(|_| ()),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        // 2 for input/validation problems, 3 for runtime failures.
        std::process::exit(if err.is_validation() { 2 } else { 3 });
    }
}
