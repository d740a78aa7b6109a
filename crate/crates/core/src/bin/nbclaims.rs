use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nbclaims::pipeline::{Pipeline, PipelineConfig, StageOutput};
use nbclaims::Error;

#[derive(Parser)]
#[command(name = "nbclaims", version, about = "Neighborhood claims in rental listings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read, clean and de-duplicate the raw corpus
    Ingest(Common),
    /// Label claims with the gazetteer string matcher
    LabelString(Common),
    /// Export every prompt the LLM labeler would send
    LlmRequests(Common),
    /// Label claims with the chat-completion labeler
    LabelLlm(Common),
    /// Score label files against the gold set
    Evaluate(Common),
    /// Social centers, distances and representation
    Geo(Common),
    /// Fit the topic model
    Topics(Common),
    /// Regress relative distance on listing features and topics
    Regress(Common),
    /// Decile table, overlays and representation summary
    Report(Common),
    /// Every stage in order
    RunAll(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the config)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_rpm: Option<u32>,
    /// Response cache file
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Serve LLM responses from the cache only
    #[arg(long)]
    offline: bool,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(m) = &self.model {
            cfg.llm.model = m.clone();
        }
        if let Some(t) = self.temperature {
            cfg.llm.temperature = t;
        }
        if let Some(r) = self.max_rpm {
            cfg.llm.max_rpm = r;
        }
        if let Some(c) = &self.cache {
            cfg.cache = Some(c.clone());
        }
        if self.offline {
            cfg.llm.offline = true;
        }
        Ok(cfg)
    }
}

fn print(stage: &str, out: &StageOutput) {
    println!("{stage}: {}", out.summary.trim_end());
    for p in &out.outputs {
        println!("  wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let (stage, common) = match &cli.command {
        Command::Ingest(c) => ("ingest", c),
        Command::LabelString(c) => ("label-string", c),
        Command::LlmRequests(c) => ("llm-requests", c),
        Command::LabelLlm(c) => ("label-llm", c),
        Command::Evaluate(c) => ("evaluate", c),
        Command::Geo(c) => ("geo", c),
        Command::Topics(c) => ("topics", c),
        Command::Regress(c) => ("regress", c),
        Command::Report(c) => ("report", c),
        Command::RunAll(c) => ("run-all", c),
    };
    let pipeline = Pipeline::new(common.config()?);
    if stage == "run-all" {
        for (name, out) in pipeline.run_all()? {
            print(&name, &out);
        }
    } else {
        print(stage, &pipeline.run_stage(stage)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
