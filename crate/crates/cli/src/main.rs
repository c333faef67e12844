use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tracing::info;
use tracing_subscriber::EnvFilter;

use crosslabel::config::{LlmBackend, PoolScope};
use crosslabel::graphsim::SelectionResult;
use crosslabel::llm::{ExchangeLog, LanguageModel};
use crosslabel::pipeline::{
    self, artifacts, check_inputs, model_from_settings, prediction_accuracy, read_predictions, DemoSource, RunOptions,
};
use crosslabel::synth::{cluster_pair, ClusterPairSpec};
use crosslabel::{Mode, PipelineInputs, PseudoLabeledSet, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "crosslabel", version, about = "Cross-task pseudo-labeling of multiple-choice tasks")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured mode.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for stage artifacts and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Write the task graphs and the propagation graph as JSONL.
    #[arg(long, global = true)]
    dump_graphs: bool,
    /// Write cross-task selections during `all`.
    #[arg(long, global = true)]
    dump_selections: bool,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rank source demonstrations for each target example.
    Select,
    /// Label the seed set with the LLM (or copy its gold labels).
    LabelSeed,
    /// Spread seed labels over the unlabeled set.
    Propagate,
    /// Answer the test set by in-context learning.
    RunIcl,
    /// Score saved test predictions.
    Eval,
    /// Run every stage of the configured mode and write a report.
    All,
    /// Write a synthetic source/target pair and a matching config into --out.
    Synth {
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
    },
}

struct Ctx {
    cfg: RunConfig,
    opts: RunOptions,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.opts.out_dir.as_ref().expect("out dir set").join(name)
    }

    fn inputs(&self) -> Result<PipelineInputs> {
        let inputs = PipelineInputs::load(&self.cfg.data).context("loading inputs")?;
        check_inputs(&self.cfg, &inputs)?;
        Ok(inputs)
    }

    fn model(&self) -> Result<Box<dyn LanguageModel>> {
        Ok(model_from_settings(&self.cfg.llm)?)
    }

    fn labels(&self, name: &str) -> Result<PseudoLabeledSet> {
        let path = self.out(name);
        PseudoLabeledSet::read_jsonl(&path).with_context(|| format!("reading {}; run the earlier stage first", path.display()))
    }

    fn selections(&self, inputs: &PipelineInputs) -> Result<SelectionResult> {
        let source = inputs.source.as_ref().context("source dataset is required")?;
        let path = self.out(artifacts::SELECTIONS);
        SelectionResult::read_jsonl(&path, source)
            .with_context(|| format!("reading {}; run `select` first", path.display()))
    }

    fn write_log(&self, log: &ExchangeLog, stage: &str) -> Result<()> {
        pipeline::write_exchanges(self.out(&format!("llm_log.{stage}.jsonl")), &log.take())?;
        Ok(())
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn synth(out: &Path, data_seed: u64) -> Result<()> {
    let pair = cluster_pair(&ClusterPairSpec {
        seed: data_seed,
        ..ClusterPairSpec::default()
    })?;
    let data_dir = out.join("data");
    let (data, sidecar) = pair.write_to(&data_dir)?;
    let mut cfg = RunConfig {
        data,
        ..RunConfig::default()
    };
    cfg.llm.backend = LlmBackend::Mock;
    cfg.llm.mock_sidecar = Some(sidecar);
    let path = out.join("config.toml");
    fs::write(&path, cfg.to_toml_string()).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote synthetic data to {} and config to {}", data_dir.display(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synth { data_seed } = cli.command {
        return synth(&cli.out, data_seed);
    }
    let cfg = load_config(&cli)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let ctx = Ctx {
        opts: RunOptions {
            out_dir: Some(cli.out.clone()),
            dump_graphs: cli.dump_graphs,
            dump_selections: cli.dump_selections,
        },
        cfg,
    };
    let cfg = &ctx.cfg;
    let log = ExchangeLog::new(pipeline::run_id(cfg));
    match cli.command {
        Command::Synth { .. } => unreachable!("handled above"),
        Command::Select => {
            if !matches!(cfg.mode, Mode::Embsim | Mode::Graphsim | Mode::Ours) {
                bail!("mode {} does not select cross-task demonstrations", cfg.mode);
            }
            let inputs = ctx.inputs()?;
            let sel = pipeline::stage_select(cfg, &inputs, &ctx.opts)?;
            println!("selected demonstrations for {} examples", sel.selections.len());
        }
        Command::LabelSeed => {
            let inputs = ctx.inputs()?;
            match cfg.mode {
                Mode::Ours => {
                    let sel = ctx.selections(&inputs)?;
                    let model = ctx.model()?;
                    let r = pipeline::stage_label_seed(cfg, &inputs, &sel, &model, Some(&log), &ctx.opts);
                    ctx.write_log(&log, "seed")?;
                    let r = r?;
                    println!("labeled {} seed examples, dropped {}", r.labels.len(), r.dropped.len());
                }
                Mode::LLlm | Mode::GlipGold => {
                    let (seed, _) = pipeline::split_pool(cfg, &inputs)?;
                    PseudoLabeledSet::from_gold(&seed).write_jsonl(ctx.out(artifacts::SEED_LABELS))?;
                    println!("copied gold labels for {} seed examples", seed.len());
                }
                m => bail!("mode {m} has no seed labeling stage"),
            }
        }
        Command::Propagate => {
            let inputs = ctx.inputs()?;
            match cfg.mode {
                Mode::Ours | Mode::GlipGold => {
                    let seed = ctx.labels(artifacts::SEED_LABELS)?;
                    let p = pipeline::stage_propagate(cfg, &inputs, &seed, &ctx.opts)?;
                    println!("propagated labels to {} examples", p.labels.len());
                }
                Mode::LLlm => {
                    let model = ctx.model()?;
                    let r = pipeline::stage_label_unlabeled(cfg, &inputs, &model, Some(&log), &ctx.opts);
                    ctx.write_log(&log, "unlabeled")?;
                    let (labels, calls) = r?;
                    println!("labeled {} of {calls} unlabeled examples by in-task ICL", labels.len());
                }
                m => bail!("mode {m} has no propagation stage"),
            }
        }
        Command::RunIcl => {
            let inputs = ctx.inputs()?;
            let model = ctx.model()?;
            let selection;
            let pool;
            let demos = match cfg.mode {
                Mode::ZeroShot => DemoSource::None,
                Mode::Embsim | Mode::Graphsim => {
                    selection = ctx.selections(&inputs)?;
                    DemoSource::CrossTask(&selection)
                }
                Mode::Oracle => {
                    pool = PseudoLabeledSet::from_gold(inputs.pool.as_ref().context("target pool is required")?);
                    DemoSource::InTask(&pool)
                }
                Mode::LLlm | Mode::GlipGold | Mode::Ours => {
                    let seed = ctx.labels(artifacts::SEED_LABELS)?;
                    pool = match cfg.pool_scope {
                        PoolScope::SeedAndPropagated => seed.merged(&ctx.labels(artifacts::PROPAGATED_LABELS)?),
                        PoolScope::SeedOnly => seed,
                    };
                    DemoSource::InTask(&pool)
                }
            };
            let r = pipeline::stage_icl(cfg, &inputs, demos, &model, Some(&log), &ctx.opts);
            ctx.write_log(&log, "test")?;
            println!("answered {} test queries", r?.len());
        }
        Command::Eval => {
            let inputs = ctx.inputs()?;
            let preds = read_predictions(ctx.out(artifacts::PREDICTIONS))?;
            let acc = prediction_accuracy(&preds, &inputs.test)?;
            let unparseable = preds.iter().filter(|p| p.prediction.is_none()).count();
            let summary = serde_json::json!({
                "mode": cfg.mode,
                "n": preds.len(),
                "unparseable": unparseable,
                "accuracy": acc,
            });
            let path = ctx.out("eval.json");
            fs::write(&path, serde_json::to_string_pretty(&summary)?).with_context(|| format!("writing {}", path.display()))?;
            println!("accuracy {:.4} over {} test examples ({unparseable} unparseable)", acc, preds.len());
        }
        Command::All => {
            let inputs = PipelineInputs::load(&cfg.data).context("loading inputs")?;
            let model = ctx.model()?;
            let report = pipeline::run_mode(cfg, &inputs, &model, &ctx.opts)?;
            print!("{}", report.to_text());
        }
    }
    info!(out = %cli.out.display(), "done");
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<crosslabel::Error>())
        .map_or(1, |e| e.category().exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
