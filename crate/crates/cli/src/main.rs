mod ablate;
mod config;
mod error;
mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spin_core::cost::{
    cost_table, model_preset, model_presets, CostInputs, CostRow, COST_CSV_HEADER, REPORTING_MAX_ITERS,
    REPORTING_RHO, REPORTING_SENTENCES, REPORTING_TOKENS,
};
use spin_core::integrate::{predict_tokenwise, IntegratedClassifier};
use spin_core::repstore::{generate_synthetic, read_dump, write_dump, RepKind, Split};

use ablate::AblationMode;
use config::{RunConfig, SynthConfig};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "spin", version, about = "Sparse cross-layer neuron probing over dumped LLM representations")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory, overriding `out_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/validation/test dumps.
    Synth { config: PathBuf },
    /// Grid search, best classifier, test metrics, early-exit curve.
    Run { config: PathBuf },
    /// Selection ablations against the configured or grid-selected cell.
    Ablate {
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: AblationMode,
    },
    /// Accuracy when only the first layers are used.
    EarlyExit { config: PathBuf },
    /// Per-token class probabilities for one sentence.
    Tokenwise {
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        sentence: usize,
    },
    /// Parameter and FLOP accounting.
    Cost(CostArgs),
    /// k-fold cross-validation with a one-sample t-test.
    Cv { config: PathBuf },
    /// Print the header of a dump file.
    Inspect { dump: PathBuf },
}

#[derive(Args)]
struct CostArgs {
    /// Named model preset (case-insensitive).
    #[arg(long, conflicts_with = "all")]
    preset: Option<String>,
    /// Every preset.
    #[arg(long)]
    all: bool,
    /// Which width a preset probes.
    #[arg(long, default_value = "activations")]
    kind: RepKind,
    #[arg(long)]
    n_param: Option<u64>,
    #[arg(long)]
    n_layers: Option<u64>,
    #[arg(long)]
    d_hs: Option<u64>,
    /// Probed width; defaults to `--d-hs`.
    #[arg(long)]
    d: Option<u64>,
    #[arg(long)]
    n_token: Option<u64>,
    #[arg(long)]
    n_sentences: Option<u64>,
    #[arg(long)]
    max_iters: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    /// CSV instead of a text table.
    #[arg(long)]
    csv: bool,
}

impl CostArgs {
    fn overrides(&self, mut i: CostInputs) -> CostInputs {
        if let Some(v) = self.n_token {
            i.n_token = v;
        }
        if let Some(v) = self.n_sentences {
            i.n_sentences = v;
        }
        if let Some(v) = self.max_iters {
            i.max_iters = v;
        }
        if let Some(v) = self.rho {
            i.rho_eta = v;
        }
        i
    }

    fn rows(&self) -> CliResult<Vec<CostRow>> {
        let presets = if self.all {
            model_presets()
        } else if let Some(name) = &self.preset {
            vec![model_preset(name)?]
        } else {
            let need = |v: Option<u64>, flag: &str| {
                v.ok_or_else(|| CliError::Config(format!("--{flag} is required without --preset or --all")))
            };
            let d_hs = need(self.d_hs, "d-hs")?;
            let inputs = self.overrides(CostInputs {
                n_param_llm: need(self.n_param, "n-param")?,
                n_layers: need(self.n_layers, "n-layers")?,
                d_hs,
                d: self.d.unwrap_or(d_hs),
                n_token: REPORTING_TOKENS,
                n_sentences: REPORTING_SENTENCES,
                max_iters: REPORTING_MAX_ITERS,
                rho_eta: REPORTING_RHO,
            });
            return Ok(vec![CostRow::new("custom", inputs)?]);
        };
        presets
            .iter()
            .map(|p| Ok(CostRow::new(p.name.clone(), self.overrides(p.reporting_inputs(self.kind)))?))
            .collect()
    }
}

fn cmd_synth(cfg: &SynthConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let splits = [
        (Split::Train, cfg.synthetic.n_sentences, cfg.seeds.train),
        (Split::Validation, cfg.val_sentences.unwrap_or(cfg.synthetic.n_sentences), cfg.seeds.val),
        (Split::Test, cfg.test_sentences.unwrap_or(cfg.synthetic.n_sentences), cfg.seeds.test),
    ];
    for (split, n, seed) in splits {
        let mut sc = cfg.synthetic.clone();
        sc.n_sentences = n;
        let base = generate_synthetic(&sc, seed)?;
        for &kind in &cfg.rep_kinds {
            let mut d = base.clone();
            d.rep_kind = kind;
            d.manifest.split = split;
            let short = match split {
                Split::Train => "train",
                Split::Validation => "val",
                Split::Test => "test",
            };
            let path = cfg.out_dir.join(format!("{}_{kind}_{short}.spin", cfg.prefix));
            write_dump(&d, &path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            println!("{} ({} sentences, {}x{})", path.display(), d.n_sentences(), d.n_layers, d.dim);
        }
    }
    Ok(())
}

fn load_dump(path: &Path) -> CliResult<spin_core::repstore::RepresentationDump> {
    if !path.is_file() {
        return Err(CliError::Config(format!("dump file {} does not exist", path.display())));
    }
    read_dump(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_tokenwise(classifier: &Path, dump: &Path, sentence: usize) -> CliResult<()> {
    let bytes = fs::read(classifier)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", classifier.display())))?;
    let clf = IntegratedClassifier::decode(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", classifier.display())))?;
    let dump = load_dump(dump)?;
    let proba = predict_tokenwise(&clf, &dump, sentence)?;
    let n_classes = proba.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..n_classes).map(|c| format!("p_{c}")).collect();
    println!("token,{},predicted", header.join(","));
    for (t, row) in proba.iter().enumerate() {
        let cols: Vec<String> = row.iter().map(f64::to_string).collect();
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(c, _)| c);
        println!("{t},{},{pred}", cols.join(","));
    }
    Ok(())
}

fn cmd_inspect(path: &Path) -> CliResult<()> {
    let d = load_dump(path)?;
    let tokens: Vec<usize> = d.sentences.iter().map(|s| s.n_tokens).collect();
    let mut counts = vec![0usize; d.n_classes()];
    for s in &d.sentences {
        if let Some(c) = counts.get_mut(s.label) {
            *c += 1;
        }
    }
    let m = &d.manifest;
    println!("rep_kind: {}", d.rep_kind);
    println!("n_layers: {}", d.n_layers);
    println!("dim: {}", d.dim);
    println!("n_classes: {}", d.n_classes());
    println!("n_sentences: {}", d.n_sentences());
    println!(
        "tokens: min {} max {} total {}",
        tokens.iter().min().unwrap_or(&0),
        tokens.iter().max().unwrap_or(&0),
        tokens.iter().sum::<usize>()
    );
    println!("class counts: {counts:?}");
    println!("model: {}", m.model_name);
    println!("dataset: {}", m.dataset_name);
    println!("split: {}", m.split);
    println!("created_by: {}", m.created_by);
    for (k, v) in &m.extra {
        println!("{k}: {v}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Synth { config } => cmd_synth(&SynthConfig::load(&config, out)?),
        Command::Run { config } => run::cmd_run(&RunConfig::load(&config, out)?),
        Command::Ablate { config, mode } => ablate::cmd_ablate(&RunConfig::load(&config, out)?, mode),
        Command::EarlyExit { config } => run::cmd_early_exit(&RunConfig::load(&config, out)?),
        Command::Cv { config } => run::cmd_cv(&RunConfig::load(&config, out)?),
        Command::Tokenwise {
            classifier,
            dump,
            sentence,
        } => cmd_tokenwise(&classifier, &dump, sentence),
        Command::Cost(args) => {
            let rows = args.rows()?;
            if args.csv {
                println!("{COST_CSV_HEADER}");
                for r in &rows {
                    println!("{}", r.to_csv());
                }
            } else {
                print!("{}", cost_table(&rows));
            }
            Ok(())
        }
        Command::Inspect { dump } => cmd_inspect(&dump),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spin: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
