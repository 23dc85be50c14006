//! `swarmtune` command-line client.
//!
//! Every subcommand is a request to the swarmtune service. Without
//! `--server` an in-process instance is started on a loopback port.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use swarmtune_client::{Client, ClientError};
use swarmtune_core::api::{ApiError, ErrorCode, OptimizeRequest, ReportRequest, ShapesRequest};
use swarmtune_core::report::render_summary;
use swarmtune_core::{Dataset, EvaluatorSpec, Preset};

#[derive(Parser, Debug)]
#[command(
    name = "swarmtune",
    version,
    about = "LeNet hyperparameter search with simplified swarm optimization"
)]
struct Cli {
    /// Service URL; an embedded service is used when absent.
    #[arg(long, global = true, env = "SWARMTUNE_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the feature-map trace of a configuration.
    Shapes(VectorArgs),
    /// Print the trainable parameter count of a configuration.
    Params(VectorArgs),
    /// Check a configuration against the search-space bounds.
    Validate(VectorArgs),
    /// Run the swarm search and write an archive.
    Optimize(Box<OptimizeArgs>),
    /// Summarize an archive.
    Report {
        #[arg(long = "in", value_name = "ARCHIVE")]
        input: PathBuf,
    },
}

#[derive(Args, Debug)]
struct VectorArgs {
    /// 16 dash-separated integers, e.g. 32-5-5-1-1-2-2-64-5-5-1-1-2-2-100-10
    #[arg(long, value_name = "VECTOR")]
    config: String,
    /// Input image as WxHxC
    #[arg(long, value_name = "WxHxC", default_value = "28x28x1")]
    input: String,
    #[arg(long)]
    num_classes: Option<u64>,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[arg(long, value_parser = parse_dataset)]
    dataset: Dataset,
    #[arg(long, value_parser = parse_preset, conflicts_with_all = ["cg", "cp", "cw"])]
    preset: Option<Preset>,
    #[arg(long, requires_all = ["cp", "cw"])]
    cg: Option<f64>,
    #[arg(long, requires_all = ["cg", "cw"])]
    cp: Option<f64>,
    #[arg(long, requires_all = ["cg", "cp"])]
    cw: Option<f64>,
    #[arg(long, default_value_t = 20)]
    gens: u32,
    #[arg(long, default_value_t = 30)]
    sols: u32,
    #[arg(long, default_value_t = 30)]
    runs: u32,
    #[arg(long, env = "SWARMTUNE_SEED", default_value_t = 0)]
    seed: u64,
    /// Stop a run at the first generation whose best beats the baseline.
    #[arg(long)]
    early_stop: bool,
    /// surrogate:param_target, surrogate:separable or external
    #[arg(long, default_value = "surrogate:param_target")]
    evaluator: String,
    /// Shell command starting a trainer worker (external evaluator).
    #[arg(long)]
    trainer_cmd: Option<String>,
    /// Per-request trainer timeout in seconds.
    #[arg(long)]
    trainer_timeout: Option<f64>,
    #[arg(long, default_value_t = 10)]
    epochs: u32,
    #[arg(long)]
    train_subset: Option<u64>,
    #[arg(long)]
    test_subset: Option<u64>,
    #[arg(long, default_value = "archive.jsonl")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallel_runs: usize,
    /// Update each generation against the gBest at its start and evaluate
    /// its solutions concurrently.
    #[arg(long)]
    frozen_gbest: bool,
    /// Score fitness on a validation split instead of the test set.
    #[arg(long)]
    validation_split: bool,
}

fn parse_dataset(s: &str) -> Result<Dataset, String> {
    s.parse::<Dataset>().map_err(|e| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse::<Preset>().map_err(|e| e.to_string())
}

/// Failure of one invocation, with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Api(api) => Self {
                code: api.code.exit_code() as u8,
                message: api.message,
            },
            other => Self {
                code: 1,
                message: other.to_string(),
            },
        }
    }
}

impl OptimizeArgs {
    fn request(&self) -> Result<OptimizeRequest, Failure> {
        let evaluator = match self.evaluator.as_str() {
            "surrogate:param_target" => EvaluatorSpec::ParamTarget { target: None },
            "surrogate:separable" => EvaluatorSpec::Separable { target: None },
            "external" => match &self.trainer_cmd {
                Some(cmd) if !cmd.trim().is_empty() => EvaluatorSpec::External {
                    command: cmd.clone(),
                    timeout_s: self.trainer_timeout,
                },
                _ => return Err(Failure::usage("--evaluator external requires --trainer-cmd")),
            },
            other => {
                return Err(Failure::usage(format!(
                    "unknown evaluator {other:?} (expected surrogate:param_target, surrogate:separable or external)"
                )))
            }
        };
        let mut req = OptimizeRequest::new(self.dataset, evaluator);
        req.preset = self.preset;
        if let (Some(g), Some(p), Some(w)) = (self.cg, self.cp, self.cw) {
            req.thresholds = Some((g, p, w));
        }
        req.gens = self.gens;
        req.sols = self.sols;
        req.runs = self.runs;
        req.seed = self.seed;
        req.early_stop = self.early_stop;
        req.epochs = self.epochs;
        req.train_subset = self.train_subset;
        req.test_subset = self.test_subset;
        req.parallel_runs = self.parallel_runs;
        req.frozen_gbest = self.frozen_gbest;
        req.validation_split = self.validation_split;
        Ok(req)
    }
}

/// `<dir>/<stem>.<suffix>` next to the archive.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

async fn run(cli: Cli) -> Result<(), Failure> {
    let client = match &cli.server {
        Some(url) => Client::new(url.clone()),
        None => {
            let addr = swarmtune_server::spawn(([127, 0, 0, 1], 0).into())
                .await
                .map_err(|e| Failure {
                    code: 1,
                    message: format!("cannot start embedded service: {e}"),
                })?;
            Client::new(format!("http://{addr}"))
        }
    };

    match cli.command {
        Command::Shapes(a) => {
            let r = client.shapes(&a.into()).await?;
            print!("{}", r.rendered);
        }
        Command::Params(a) => {
            let r = client.params(&a.into()).await?;
            println!("{}", r.param_count);
        }
        Command::Validate(a) => {
            let r = client.validate(&a.into()).await?;
            if r.ok {
                println!("ok");
            } else {
                for m in &r.messages {
                    println!("{m}");
                }
                return Err(Failure {
                    code: ErrorCode::Infeasible.exit_code() as u8,
                    message: format!("{} violation(s)", r.messages.len()),
                });
            }
        }
        Command::Optimize(a) => {
            let req = a.request()?;
            match client.optimize(&req).await {
                Ok(r) => {
                    write(&a.out, &r.archive_jsonl)?;
                    write(&sibling(&a.out, "runs.csv"), &r.runs_csv)?;
                    write(&sibling(&a.out, "summary.csv"), &r.summary_csv)?;
                    print!("{}", render_summary(&r.summary));
                }
                Err(ClientError::Api(ApiError {
                    code,
                    message,
                    partial_archive,
                })) => {
                    if let Some(partial) = partial_archive {
                        write(&a.out, &partial)?;
                        eprintln!("partial archive written to {}", a.out.display());
                    }
                    return Err(Failure {
                        code: code.exit_code() as u8,
                        message,
                    });
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::Report { input } => {
            let text = fs::read_to_string(&input)
                .map_err(|e| Failure::usage(format!("cannot read {}: {e}", input.display())))?;
            let r = client
                .report(&ReportRequest {
                    archive_jsonl: text,
                })
                .await?;
            print!("{}", r.rendered);
        }
    }
    Ok(())
}

impl From<VectorArgs> for ShapesRequest {
    fn from(a: VectorArgs) -> Self {
        ShapesRequest {
            vector: a.config,
            input: a.input,
            num_classes: a.num_classes,
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("swarmtune: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
