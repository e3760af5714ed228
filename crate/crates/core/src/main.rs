use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use citegrowth::pipeline::{self, ModelKind, PipelineError, RunConfig};

#[derive(Parser)]
#[command(name = "citegrowth", version, about = "Citation-network community detection and growth forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic SBM citation graph.
    Generate(Common),
    /// Biased random walks and skip-gram embedding.
    Embed(Common),
    /// Ward linkage and flat cut of the embedding.
    Cluster(Common),
    /// Monthly per-cluster series, event times and ADF summary.
    Series(Common),
    /// Fit the enabled forecasters on every cluster.
    Fit(Common),
    /// Forecast every horizon from the fitted models.
    Forecast(Common),
    /// MAPE / direction-accuracy tables.
    Score(Common),
    /// All stages end to end.
    Run(Common),
    /// Plot data for the dendrogram and predicted-vs-actual bars.
    Report(Common),
    /// Print the effective configuration as TOML.
    Config(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of hawkes,arima,lstm.
    #[arg(long)]
    models: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bit-reproducible single-threaded embedding training.
    #[arg(long)]
    deterministic: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = &self.models {
            cfg.models = ModelKind::parse_list(m)?;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Generate(c) => {
            let cfg = c.resolve()?;
            let g = pipeline::generate(&cfg)?;
            println!("generated {} nodes, {} edges", g.node_count(), g.edge_count());
        }
        Command::Embed(c) => {
            let cfg = c.resolve()?;
            let g = pipeline::load_input_graph(&cfg)?;
            let e = pipeline::embed(&cfg, &g)?;
            println!("embedded {} nodes in {} dimensions", e.node_count(), e.dimension());
        }
        Command::Cluster(c) => {
            let cfg = c.resolve()?;
            let (labels, emb) = pipeline::load_embedding(&cfg)?;
            let planted = pipeline::load_input_graph(&cfg).ok().and_then(|g| g.planted().map(<[usize]>::to_vec));
            let (_, a) = pipeline::cluster(&cfg, &labels, &emb, planted.as_deref())?;
            println!("{} clusters", a.k);
        }
        Command::Series(c) => {
            let cfg = c.resolve()?;
            let g = pipeline::load_input_graph(&cfg)?;
            let a = pipeline::load_assignment(&cfg, &g)?;
            let s = pipeline::series_stage(&cfg, &g, &a)?;
            println!("{} series; unit root not rejected: {}", s.len(), pipeline::adf_report(&s).summary());
        }
        Command::Fit(c) => {
            let cfg = c.resolve()?;
            let s = pipeline::load_series(&cfg)?;
            pipeline::fit_models(&cfg, &s)?;
            println!("fitted {} models on {} clusters", cfg.models.len(), s.len());
        }
        Command::Forecast(c) => {
            let cfg = c.resolve()?;
            let s = pipeline::load_series(&cfg)?;
            let fits = pipeline::load_fits(&cfg, &s)?;
            let rows = pipeline::forecast_stage(&cfg, &s, &fits)?;
            println!("{} forecasts", rows.len());
        }
        Command::Score(c) => {
            let cfg = c.resolve()?;
            let rows = pipeline::load_forecasts(&cfg)?;
            let t = pipeline::score_stage(&cfg, &rows)?;
            print!("{}{}", t.to_csv(), t.filtered_to_csv());
        }
        Command::Run(c) => {
            let cfg = c.resolve()?;
            let r = pipeline::run_pipeline(&cfg)?;
            println!("{} clusters; unit root not rejected: {}", r.clusters, r.adf.summary());
            print!("{}{}", r.scores.to_csv(), r.scores.filtered_to_csv());
            println!("manifest: {}", cfg.out.join(pipeline::artifacts::MANIFEST).display());
        }
        Command::Report(c) => {
            let cfg = c.resolve()?;
            pipeline::report(&cfg)?;
            println!("wrote {} and {}", pipeline::artifacts::REPORT_DENDROGRAM, pipeline::artifacts::REPORT_BARS);
        }
        Command::Config(c) => print!("{}", c.resolve()?.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
