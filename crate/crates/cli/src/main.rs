//! Command line front end for the experiment harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rangepoison::harness::{
    prism_violation_bruteforce, prism_violation_ratio, run_experiment, write_outputs, write_summaries,
    AttackKind, ExperimentConfig, Summary,
};
use rangepoison::Result;

#[derive(Parser)]
#[command(name = "rangepoison", version, about = "Poisoning attacks on LDP range-query protocols")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, short)]
    config: PathBuf,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config.
    Run(Common),
    /// Run the config over every combination of budgets, fake ratios and attacks.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        epsilons: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        rhos: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        attacks: Vec<AttackKind>,
    },
    /// Run with the defense on and report detection rates.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Significance level; overrides the config.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Print the PRISM privacy violation ratio next to e^eps.
    PrismCheck {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0])]
        epsilons: Vec<f64>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        c.seeds = vec![s];
    }
    if let Some(o) = &common.out {
        c.output = Some(o.clone());
    }
    Ok(c)
}

fn show(s: &Summary) {
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{:?} {} eps={} rho={} trials={} failed={} true={:.4} honest={:.4} poisoned={:.4} efficiency={} detection={} honest_detection={}",
        s.protocol,
        s.attack.name(),
        s.epsilon,
        s.rho,
        s.trials,
        s.failed,
        s.mean_true,
        s.mean_honest,
        s.mean_poisoned,
        opt(s.mean_efficiency),
        opt(s.detection_rate),
        opt(s.honest_detection_rate),
    );
}

fn execute(c: &ExperimentConfig, threads: Option<usize>, dir: Option<&Path>) -> Result<Summary> {
    let out = run_experiment(c, threads)?;
    if out.dropped_rows > 0 {
        eprintln!("dropped {} ill-formed rows", out.dropped_rows);
    }
    if let Some(dir) = dir {
        for p in write_outputs(&out, dir)? {
            eprintln!("wrote {}", p.display());
        }
    }
    show(&out.summary);
    Ok(out.summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(common) => {
            let c = load(&common)?;
            execute(&c, common.threads, c.output.as_deref())?;
        }
        Command::Sweep { common, epsilons, rhos, attacks } => {
            let base = load(&common)?;
            let epsilons = if epsilons.is_empty() { vec![base.epsilon] } else { epsilons };
            let rhos = if rhos.is_empty() { vec![base.rho] } else { rhos };
            let attacks = if attacks.is_empty() {
                vec![base.attack.kind]
            } else {
                attacks
            };
            let mut rows = Vec::new();
            for &eps in &epsilons {
                for &rho in &rhos {
                    for &attack in &attacks {
                        let mut c = base.clone();
                        c.epsilon = eps;
                        c.rho = rho;
                        c.attack.kind = attack;
                        c.validate()?;
                        let dir = base
                            .output
                            .as_ref()
                            .map(|o| o.join(format!("{}_eps{eps}_rho{rho}", attack.name())));
                        rows.push(execute(&c, common.threads, dir.as_deref())?);
                    }
                }
            }
            if let Some(o) = &base.output {
                let path = o.join("sweep_summary.csv");
                write_summaries(&rows, &path)?;
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Detect { common, alpha } => {
            let mut c = load(&common)?;
            c.defense.enabled = true;
            if let Some(a) = alpha {
                c.defense.alpha = a;
            }
            c.validate()?;
            execute(&c, common.threads, c.output.as_deref())?;
        }
        Command::PrismCheck { epsilons } => {
            println!("epsilon,ratio,exp_epsilon,ratio_over_exp,bruteforce");
            for eps in epsilons {
                let r = prism_violation_ratio(eps)?;
                println!("{eps},{r},{},{},{}", eps.exp(), r / eps.exp(), prism_violation_bruteforce(eps));
            }
        }
    }
    Ok(())
}
