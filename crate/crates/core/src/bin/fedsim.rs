use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsim::data::{convert_idx, synthetic_dataset, write_dataset, SyntheticSpec};
use fedsim::harness::{config, persist, plot, runner};

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Federated-learning backdoor defense simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for records.jsonl, summary.json, and the config
        /// snapshot.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the first round of the mean-backdoor-accuracy window.
        #[arg(long)]
        ba_from_round: Option<usize>,
    },
    /// Recompute the summary from the persisted round records.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG plots from the persisted round records.
    Plot {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a documented example config.
    ExampleConfig {
        #[arg(long, default_value = "experiment.toml")]
        path: PathBuf,
    },
    /// Generate a synthetic dataset file in the binary layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 0.12)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert an idx-ubyte image/label pair into the binary layout.
    Convert {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> fedsim::Result<()> {
    match cli.command {
        Command::Run {
            config: config_path,
            out,
            seed,
            ba_from_round,
        } => {
            let mut config = config::ExperimentConfig::from_path(&config_path)?;
            if let Some(seed) = seed {
                config.run.master_seed = seed;
            }
            if let Some(round) = ba_from_round {
                config.run.ba_from_round = round;
            }
            config.validate()?;
            let outcome = runner::run_experiment(&config, Some(&out))?;
            print_summary(&outcome.summary);
            Ok(())
        }
        Command::Report { out } => {
            let config = persist::read_config_snapshot(&out)?;
            let records = persist::read_records(&out)?;
            let summary = runner::summarize(
                &records,
                config.defense.aggregation,
                config.run.ba_from_round,
                config.run.convergence_threshold,
            )?;
            persist::write_summary(&out, &summary)?;
            print_summary(&summary);
            Ok(())
        }
        Command::Plot { out } => {
            let records = persist::read_records(&out)?;
            let progress = out.join("progress.svg");
            plot::plot_progress(&records, &progress)?;
            println!("wrote {}", progress.display());
            let scatter = out.join("pca_scatter.svg");
            if plot::plot_pca_scatter(&records, &scatter)? {
                println!("wrote {}", scatter.display());
            } else {
                println!("no defense rounds recorded; skipped the PCA scatter");
            }
            Ok(())
        }
        Command::ExampleConfig { path } => {
            std::fs::write(&path, config::example_config_toml())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Synth {
            out,
            samples,
            classes,
            noise,
            seed,
        } => {
            let spec = SyntheticSpec {
                n_samples: samples,
                num_classes: classes,
                noise,
            };
            let dataset = synthetic_dataset(&spec, seed)?;
            write_dataset(&out, &dataset)?;
            println!(
                "wrote {} ({} samples, {} classes)",
                out.display(),
                samples,
                classes
            );
            Ok(())
        }
        Command::Convert {
            images,
            labels,
            out,
        } => {
            convert_idx(&images, &labels, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn print_summary(summary: &runner::MetricsSummary) {
    println!("rounds:                 {}", summary.rounds);
    println!("aggregation:            {}", summary.aggregation_method);
    println!(
        "final global accuracy:  {:.4}",
        summary.final_global_accuracy
    );
    println!(
        "mean backdoor accuracy: {:.4} (from round {})",
        summary.mean_backdoor_accuracy, summary.ba_from_round
    );
    if let Some(max_ba) = &summary.max_ba_after_convergence {
        println!(
            "max BA after convergence: {:.4}{}",
            max_ba.value,
            if max_ba.converged {
                ""
            } else {
                " (threshold never reached)"
            }
        );
    }
    match summary.mean_fpr {
        Some(fpr) => println!("mean FPR:               {:.4}", fpr),
        None => println!("mean FPR:               n/a"),
    }
    match summary.mean_fnr {
        Some(fnr) => println!("mean FNR:               {:.4}", fnr),
        None => println!("mean FNR:               n/a (no adversary selected)"),
    }
    if summary.partial {
        println!("warning: some rounds aborted; results are partial");
    }
}
