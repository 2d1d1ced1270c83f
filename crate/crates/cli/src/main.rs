use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metawsd::config::RunConfig;
use metawsd::pipeline;

#[derive(Parser)]
#[command(
    name = "metawsd",
    version,
    about = "Few-shot episodic meta-learning for WSD"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (JSONL annotations + MWE1 embeddings).
    Synth(Common),
    /// Build the episode manifest and its statistics table.
    BuildData(Common),
    /// Meta-train (or NE-train) one model per seed.
    Train(Common),
    /// Evaluate on the meta-test episodes and write report.json / report.csv.
    Eval(Common),
    /// Score against the number of meta-training episodes.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML file with RunConfig keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any RunConfig key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    support_size: Option<usize>,
    #[arg(long)]
    words_per_episode: Option<usize>,
    #[arg(long)]
    n_train_episodes: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    create_graph: Option<bool>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Comma-separated episode counts for `sweep`.
    #[arg(long, value_delimiter = ',')]
    counts: Vec<usize>,
}

fn quoted(p: &std::path::Path) -> String {
    format!("{:?}", p.display().to_string())
}

impl Common {
    fn load(&self) -> metawsd::Result<RunConfig> {
        let mut kv = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.push(format!("{k}={v}"));
            }
        };
        put("method", self.method.as_ref().map(|m| format!("{m:?}")));
        put("corpus", self.corpus.as_deref().map(quoted));
        put("embeddings", self.embeddings.as_deref().map(quoted));
        put("manifest", self.manifest.as_deref().map(quoted));
        put("checkpoint", self.checkpoint.as_deref().map(quoted));
        put("out_dir", self.out_dir.as_deref().map(quoted));
        put("support_size", self.support_size.map(|v| v.to_string()));
        put(
            "words_per_episode",
            self.words_per_episode.map(|v| v.to_string()),
        );
        put(
            "n_train_episodes",
            self.n_train_episodes.map(|v| v.to_string()),
        );
        put("data_seed", self.data_seed.map(|v| v.to_string()));
        put("create_graph", self.create_graph.map(|v| v.to_string()));
        put("max_epochs", self.max_epochs.map(|v| v.to_string()));
        if !self.seeds.is_empty() {
            put("seeds", Some(format!("{:?}", self.seeds)));
        }
        if !self.counts.is_empty() {
            put("sweep_counts", Some(format!("{:?}", self.counts)));
        }
        // Explicit `--set` pairs win over the named flags.
        kv.extend(self.set.iter().cloned());
        RunConfig::load(self.config.as_deref(), &kv)
    }
}

fn run(cli: Cli) -> metawsd::Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let cfg = c.load()?;
            let corpus = pipeline::cmd_synth(&cfg)?;
            println!(
                "wrote {} sentences over {} words",
                corpus.sentences().len(),
                corpus.words().len()
            );
        }
        Command::BuildData(c) => {
            let cfg = c.load()?;
            let (_, stats) = pipeline::cmd_build_data(&cfg)?;
            print!("{}", stats.to_table());
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            for p in pipeline::cmd_train(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Eval(c) => {
            let cfg = c.load()?;
            println!("{}", pipeline::cmd_eval(&cfg)?.summary());
        }
        Command::Sweep(c) => {
            let cfg = c.load()?;
            print!("{}", pipeline::sweep_csv(&pipeline::cmd_sweep(&cfg)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
