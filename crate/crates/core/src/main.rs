use std::path::PathBuf;
use std::process::ExitCode;

use boxdeform::pipeline::{run, PipelineError, RunConfig, ScorerKind, Stage};
use clap::Parser;

/// Deform a mesh with per-part box scales optimized by CMA-ES.
#[derive(Debug, Parser)]
#[command(name = "boxdeform", version)]
struct Cli {
    /// TOML run configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    prompt: Option<String>,
    /// proxy-aspect, proxy-silhouette, remote or stdio.
    #[arg(long)]
    scorer: Option<ScorerKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated box counts to sweep, e.g. 2,3,4.
    #[arg(long, value_delimiter = ',')]
    splits: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Interpolation frames to export; 0 disables.
    #[arg(long)]
    steps: Option<usize>,
    /// Remote scorer root URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Child-process scorer command line.
    #[arg(long)]
    command: Option<String>,
    /// Aspect proxy target extents, e.g. 1,1.5,1.
    #[arg(long, value_delimiter = ',')]
    target_ratios: Option<Vec<f64>>,
    /// Silhouette proxy target: source scaled by this factor.
    #[arg(long)]
    target_scale: Option<f64>,
    #[arg(long)]
    max_generations: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
}

impl Cli {
    fn config(self) -> Result<RunConfig, PipelineError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.mesh {
            c.mesh = v;
        }
        if let Some(v) = self.prompt {
            c.prompt = v;
        }
        if let Some(v) = self.scorer {
            c.scorer.kind = v;
        }
        if let Some(v) = self.seed {
            c.cma.seed = v;
        }
        if let Some(v) = self.splits {
            c.splits = v;
        }
        if let Some(v) = self.out {
            c.out = v;
        }
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = self.endpoint {
            c.scorer.endpoint = Some(v);
        }
        if let Some(v) = self.command {
            c.scorer.command = Some(v);
        }
        if let Some(v) = self.target_ratios {
            let r: [f64; 3] = v
                .try_into()
                .map_err(|_| PipelineError::new(Stage::Config, "target ratios need 3 values"))?;
            c.scorer.target_ratios = Some(r);
        }
        if let Some(v) = self.target_scale {
            c.scorer.target_scale = Some(v);
        }
        if let Some(v) = self.max_generations {
            c.cma.max_generations = v;
        }
        if let Some(v) = self.resolution {
            c.resolution = v;
        }
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = Cli::parse().config().and_then(|c| run(&c).map(|r| (c, r)));
    match result {
        Ok((config, report)) => {
            let chosen = report.chosen();
            println!(
                "chose {} boxes, loss {:.6}; outputs in {}",
                chosen.box_count,
                chosen.final_loss,
                config.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("boxdeform: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
