use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lesionseg::ablation::{self, Variant};
use lesionseg::audit::{self, AuditItem};
use lesionseg::curriculum::{self, PhaseLimit};
use lesionseg::data::{self, Case, Channel, LesionMask, Split, Volume};
use lesionseg::metrics;
use lesionseg::params::Checkpoint;
use lesionseg::{Model, RunConfig};

/// Environment variable holding the log filter (`error` .. `trace`).
const LOG_ENV: &str = "LESIONSEG_LOG";
const CONFIG_FILE: &str = "config.txt";

#[derive(Parser)]
#[command(name = "lesionseg", version, about = "Text-guided 3D lesion segmentation on synthetic phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved configuration.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate the synthetic dataset and print its manifest.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the train split, writing checkpoints and the epoch log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Phases::All)]
        phases: Phases,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Directory for the report files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
        /// Write per-case heatmap and probability volumes under `<out>/heatmaps`.
        #[arg(long, requires = "out")]
        export_heatmap: bool,
    },
    /// Train and test every ablation variant over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of seeds; overrides `ablate.seeds`.
        #[arg(long)]
        seeds: Option<usize>,
        /// Comma-separated variant names; all five by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Run gradient checks or invariant checks.
    Audit {
        #[arg(long, value_enum)]
        what: AuditKind,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Phases {
    All,
    SegOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditKind {
    Gradients,
    Invariants,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_canonical(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    write(&out.join(CONFIG_FILE), cfg.to_canonical())
}

fn load_split(data_dir: &Path, split: Split) -> Result<Vec<Case>> {
    let cases = data::load_split(data_dir, split)?;
    if cases.is_empty() {
        bail!("{}: split `{}` has no cases", data_dir.display(), split.as_str());
    }
    Ok(cases)
}

fn gen_data(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let manifest = data::generate_dataset(&cfg, out)?;
    write_config(out, &cfg)?;
    print!("{}", manifest.to_csv());
    Ok(())
}

fn train(config: Option<&Path>, data_dir: &Path, out: &Path, phases: Phases) -> Result<()> {
    let cfg = load_config(config)?;
    let cases = load_split(data_dir, Split::Train)?;
    write_config(out, &cfg)?;
    let limit = match phases {
        Phases::All => PhaseLimit::All,
        Phases::SegOnly => PhaseLimit::SegOnly,
    };
    let ckpt_dir = out.join("checkpoints");
    let result = curriculum::train(&cfg, &cases, limit, |label, ck| {
        let path = ckpt_dir.join(format!("{label}.ckpt"));
        log::info!("writing {}", path.display());
        ck.save(&path)
    });
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            let dump = out.join("failure.txt");
            write(&dump, format!("{e}\n\n{}", cfg.to_canonical()))?;
            return Err(anyhow::Error::new(e).context(format!("training failed; diagnostics in {}", dump.display())));
        }
    };
    write(&out.join("epoch_log.csv"), curriculum::epoch_log_csv(&outcome.log))?;
    let report = metrics::aggregate(&outcome.train_metrics)?;
    write(&out.join("train_cases.csv"), metrics::cases_csv(&outcome.train_metrics))?;
    write(&out.join("train_report.json"), metrics::report_json(&outcome.train_metrics, &report))?;
    println!("final training Dice {}", outcome.train_dice());
    Ok(())
}

fn export_heatmaps(model: &Model, cases: &[Case], dir: &Path) -> Result<()> {
    for case in cases {
        let pred = model.predict(&case.volume)?;
        let v = &case.volume;
        let mask = LesionMask::new(v.extents, metrics::binarize(&pred.probabilities, model.config.metrics.threshold))?;
        let exported = Case {
            volume: Volume {
                case_id: v.case_id.clone(),
                extents: v.extents,
                spacing: v.spacing,
                channels: vec![
                    Channel {
                        name: "heatmap".into(),
                        data: pred.heatmap,
                    },
                    Channel {
                        name: "probability".into(),
                        data: pred.probabilities,
                    },
                ],
            },
            mask,
        };
        data::save_case(&exported, &data::case_dir(dir, &v.case_id))?;
    }
    Ok(())
}

fn eval(
    checkpoint: &Path,
    data_dir: &Path,
    split: Split,
    out: Option<&Path>,
    json: bool,
    export_heatmap: bool,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = Model::from_checkpoint(&ck)?;
    let cases = load_split(data_dir, split)?;
    let per_case = metrics::evaluate_cases(&model, &cases, &model.config.metrics)?;
    let report = metrics::aggregate(&per_case)?;
    let json_text = metrics::report_json(&per_case, &report);
    let table = metrics::render_table(&[(split.as_str().to_string(), report)]);
    if let Some(out) = out {
        write_config(out, &model.config)?;
        write(&out.join("cases.csv"), metrics::cases_csv(&per_case))?;
        write(&out.join("report.json"), &json_text)?;
        write(&out.join("report.md"), &table)?;
        if export_heatmap {
            export_heatmaps(&model, &cases, &out.join("heatmaps"))?;
        }
    }
    if json {
        println!("{json_text}");
    } else {
        print!("{table}");
    }
    Ok(())
}

fn ablate(config: Option<&Path>, data_dir: &Path, out: &Path, seeds: Option<usize>, names: &[String]) -> Result<bool> {
    let mut cfg = load_config(config)?;
    if let Some(n) = seeds {
        cfg.ablate_seeds = n;
        cfg.validate()?;
    }
    let variants = if names.is_empty() {
        Variant::ALL.to_vec()
    } else {
        names
            .iter()
            .map(|n| {
                Variant::ALL
                    .into_iter()
                    .find(|v| v.slug() == n)
                    .with_context(|| {
                        let known: Vec<_> = Variant::ALL.iter().map(|v| v.slug()).collect();
                        format!("unknown variant `{n}` ({})", known.join(", "))
                    })
            })
            .collect::<Result<_>>()?
    };
    let train = load_split(data_dir, Split::Train)?;
    let test = load_split(data_dir, Split::Test)?;
    write_config(out, &cfg)?;
    let results = ablation::ablate(&cfg, &variants, &train, &test);
    let mut ok = true;
    for r in &results {
        let mut csv = String::from("seed,");
        csv.push_str(metrics::CASE_CSV_HEADER);
        csv.push('\n');
        for (seed, res) in &r.per_seed {
            match res {
                Ok(cases) => {
                    for line in metrics::cases_csv(cases).lines().skip(1) {
                        csv.push_str(&format!("{seed},{line}\n"));
                    }
                }
                Err(e) => {
                    ok = false;
                    write(&out.join(format!("{}-seed{seed}.failure.txt", r.variant.slug())), format!("{e}\n"))?;
                }
            }
        }
        write(&out.join(format!("{}.csv", r.variant.slug())), csv)?;
    }
    let table = ablation::render(&results);
    write(&out.join("ablation.md"), &table)?;
    print!("{table}");
    Ok(ok)
}

fn report(items: &[AuditItem]) -> bool {
    for i in items {
        println!("{i}");
    }
    let failed: Vec<&str> = items.iter().filter(|i| !i.passed).map(|i| i.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed", items.len());
    } else {
        println!("{} of {} checks failed: {}", failed.len(), items.len(), failed.join("; "));
    }
    failed.is_empty()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Config { config } => {
            print!("{}", load_config(config.as_deref())?.to_canonical());
            Ok(true)
        }
        Command::GenData { config, out } => gen_data(config.as_deref(), &out).map(|_| true),
        Command::Train {
            config,
            data,
            out,
            phases,
        } => train(config.as_deref(), &data, &out, phases).map(|_| true),
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
            json,
            export_heatmap,
        } => eval(&checkpoint, &data, split, out.as_deref(), json, export_heatmap).map(|_| true),
        Command::Ablate {
            config,
            data,
            out,
            seeds,
            variants,
        } => ablate(config.as_deref(), &data, &out, seeds, &variants),
        Command::Audit { what, trials, seed } => Ok(match what {
            AuditKind::Gradients => report(&audit::gradient_audit(trials)),
            AuditKind::Invariants => report(&audit::invariant_audit(seed)),
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
