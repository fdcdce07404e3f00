use std::process::ExitCode;

use clap::Parser;
use i3sb::cli::{
    cmd_eval, cmd_gen_data, cmd_sample, cmd_train_with, cmd_verify, env_results_root, Cli, Command,
    Context, GenDataOutcome,
};

fn run(cli: Cli) -> i3sb::Result<ExitCode> {
    let ctx = Context::load(cli.config.as_deref(), env_results_root(), cli.jobs)?;
    match cli.command {
        Command::GenData { force } => match cmd_gen_data(&ctx, force)? {
            GenDataOutcome::Written { manifest_hash } => {
                println!(
                    "wrote dataset to {} (manifest {manifest_hash})",
                    ctx.root.join("data").display()
                )
            }
            GenDataOutcome::Unchanged { manifest_hash } => {
                println!("dataset up to date (manifest {manifest_hash})")
            }
        },
        Command::Train => {
            let out = cmd_train_with(&ctx, |iter, loss| {
                eprintln!("iter {iter:>6}  loss {loss:.6}")
            })?;
            match out.losses.last() {
                Some((iter, loss)) => println!("trained {iter} iterations, final loss {loss:.6}"),
                None => println!("predictor {:?} needs no training", ctx.cfg.predictor.kind),
            }
        }
        Command::Sample => {
            let out = cmd_sample(&ctx)?;
            println!(
                "wrote {} restored images under {}",
                out.written.len(),
                ctx.root.join("samples").display()
            );
        }
        Command::Eval => {
            let out = cmd_eval(&ctx)?;
            println!(
                "{:<12} {:>4} {:>9} {:>9} {:>9}",
                "method", "N", "ssim", "haralick", "rmse"
            );
            for r in out.rows.iter().filter(|r| r.image_id == "mean") {
                println!(
                    "{:<12} {:>4} {:>9.4} {:>9.4} {:>9.4}",
                    r.method, r.steps, r.ssim, r.haralick_distance, r.rmse
                );
            }
        }
        Command::Verify { mutate } => {
            let out = cmd_verify(&ctx, mutate)?;
            print!("{}", out.summary);
            if !out.pass {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
