//! The `basketrec` command line: prepare, train, evaluate, ablate, and
//! noise-sweep. Every command writes a manifest into the output directory
//! before doing any work and holds a lock file while it runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::{Preset, TrainConfig};
use crate::dataset::{filter_baskets, load_transactions, split_within_basket, LoadSchema};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, noise_sweep};
use crate::persist::{load_checkpoint, load_split, save_checkpoint, save_split};
use crate::trainer::{fit, Checkpoint};

const EXIT_CODES_HELP: &str = "\
EXIT CODES:
   0  command completed
   1  unexpected internal failure
   2  argument parsing error
   3  i/o error (missing or unreadable path)
   4  schema error (missing column)
   5  empty dataset after loading or filtering
   6  invalid configuration
   7  bad file format (magic/version)
   8  sampling failure
   9  training divergence (non-finite loss)
  10  output directory locked by another run
  11  internal contract violation
  12  degenerate (zero-norm) embedding
";

#[derive(Parser)]
#[command(
    name = "basketrec",
    version,
    about = "Within-basket recommendation: dual-view graph training, contrastive denoising, ranking evaluation",
    after_long_help = EXIT_CODES_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a raw transaction log, filter baskets, and write the split.
    Prepare(PrepareArgs),
    /// Train a model on a prepared split.
    Train(TrainArgs),
    /// Full-ranking evaluation of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Train and evaluate every ablation preset on one split.
    Ablate(AblateArgs),
    /// Noise-robustness sweep: inject noise, train both variants, emit curves.
    NoiseSweep(NoiseSweepArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Delimited transaction file with a header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "user_id")]
    user_col: String,
    #[arg(long, default_value = "basket_id")]
    basket_col: String,
    #[arg(long, default_value = "item_id")]
    item_col: String,
    /// Field delimiter: auto, comma, or tab.
    #[arg(long, default_value = "auto")]
    delimiter: String,
    /// Drop baskets with fewer items than this.
    #[arg(long, default_value_t = 30)]
    min_basket_size: usize,
    /// Fraction of each basket that stays in training.
    #[arg(long, default_value_t = 0.8)]
    train_ratio: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Config resolution shared by the training-style commands. Precedence, low
/// to high: defaults, --config file, --preset, BASKETREC_* env vars, --set
/// pairs, --seed.
#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ablation preset: full, lightgcn-only, no-ca, no-fusion, random-aug, additive.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Override one config key (repeatable), e.g. --set epochs=50.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse::<Preset>().map_err(|e| e.to_string())
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                TrainConfig::from_text(&text)?
            }
            None => TrainConfig::default(),
        };
        if let Some(p) = self.preset {
            p.apply(&mut cfg);
        }
        cfg.apply_env()?;
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared split file from `prepare`.
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated K list.
    #[arg(long, default_value = "5,10,20,40,60,80,100", value_parser = parse_usize_list)]
    k: std::vec::Vec<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Presets to run (comma separated); default is all of them.
    #[arg(long, default_value = "full,lightgcn-only,no-ca,no-fusion,random-aug,additive", value_parser = parse_preset_list)]
    presets: std::vec::Vec<Preset>,
    #[arg(long, default_value = "5,10,20,40,60,80,100", value_parser = parse_usize_list)]
    k: std::vec::Vec<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct NoiseSweepArgs {
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Noise ratios, as fractions of the train pair count.
    #[arg(long, default_value = "0,0.2,0.4,0.6,0.8", value_parser = parse_f64_list)]
    ratios: std::vec::Vec<f64>,
    /// Seeds; each (ratio, seed) trains both variants.
    #[arg(long, default_value = "42", value_parser = parse_u64_list)]
    seeds: std::vec::Vec<u64>,
    #[arg(long, default_value = "5,10,20,40,60,80,100", value_parser = parse_usize_list)]
    k: std::vec::Vec<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn parse_usize_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',').map(|t| t.trim().parse::<usize>().map_err(|e| e.to_string())).collect()
}

fn parse_u64_list(s: &str) -> std::result::Result<Vec<u64>, String> {
    s.split(',').map(|t| t.trim().parse::<u64>().map_err(|e| e.to_string())).collect()
}

fn parse_f64_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string())).collect()
}

fn parse_preset_list(s: &str) -> std::result::Result<Vec<Preset>, String> {
    s.split(',').map(|t| t.trim().parse::<Preset>().map_err(|e| e.to_string())).collect()
}

/// Entry point used by both `main` and the integration tests. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through this path too
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::NoiseSweep(a) => cmd_noise_sweep(a),
    }
}

/// Held for the duration of a command; the lock file disappears on drop.
struct OutDir {
    dir: PathBuf,
    lock: PathBuf,
}

impl OutDir {
    fn acquire(dir: &Path) -> Result<OutDir> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lock = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(OutDir { dir: dir.to_path_buf(), lock }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::OutputLocked { path: dir.to_path_buf(), lock })
            }
            Err(e) => Err(Error::io(&lock, e)),
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Reproduction record: command, resolved config, input digests, outputs,
/// seed, tool version. Only the timestamp field varies between reruns.
fn write_manifest(
    out: &OutDir,
    command: &str,
    seed: u64,
    inputs: &[(&str, &Path)],
    outputs: &[&str],
    config: Option<&TrainConfig>,
    extra: &[(&str, String)],
) -> Result<()> {
    let mut m = String::new();
    let _ = writeln!(m, "command = {command}");
    let _ = writeln!(m, "tool_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "seed = {seed}");
    for (name, path) in inputs {
        let _ = writeln!(m, "input.{name} = {}", path.display());
        let _ = writeln!(m, "sha256.{name} = {}", sha256_file(path)?);
    }
    for o in outputs {
        let _ = writeln!(m, "output = {o}");
    }
    for (k, v) in extra {
        let _ = writeln!(m, "{k} = {v}");
    }
    if let Some(cfg) = config {
        for line in cfg.to_text().lines() {
            let _ = writeln!(m, "config.{line}");
        }
    }
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let _ = writeln!(m, "timestamp_unix = {ts}");
    out.write("manifest.txt", &m)?;
    Ok(())
}

fn cmd_prepare(a: PrepareArgs) -> Result<()> {
    let out = OutDir::acquire(&a.out)?;
    if !a.input.exists() {
        return Err(Error::io(&a.input, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    write_manifest(
        &out,
        "prepare",
        a.seed,
        &[("raw", a.input.as_path())],
        &["split.bin", "stats.txt", "stats.json"],
        None,
        &[
            ("min_basket_size", a.min_basket_size.to_string()),
            ("train_ratio", a.train_ratio.to_string()),
            ("columns", format!("{},{},{}", a.user_col, a.basket_col, a.item_col)),
        ],
    )?;

    let schema = LoadSchema {
        user_col: a.user_col,
        basket_col: a.basket_col,
        item_col: a.item_col,
        delimiter: match a.delimiter.as_str() {
            "auto" => None,
            "comma" => Some(b','),
            "tab" => Some(b'\t'),
            other => return Err(Error::Config(format!("unknown delimiter {other:?} (auto, comma, tab)"))),
        },
    };
    if !(a.train_ratio > 0.0 && a.train_ratio < 1.0) {
        return Err(Error::Config(format!("train_ratio must be in (0, 1), got {}", a.train_ratio)));
    }
    if a.min_basket_size < 1 {
        return Err(Error::Config("min_basket_size must be >= 1".into()));
    }

    let raw = load_transactions(&a.input, &schema)?;
    let filtered = filter_baskets(&raw, a.min_basket_size)?;
    let stats = filtered.stats();
    let split = split_within_basket(&filtered, a.train_ratio, a.seed);

    let split_path = out.dir.join("split.bin");
    save_split(&split_path, &split)?;

    let mut text = stats.render();
    let _ = writeln!(text, "train_pairs\t{}", split.train.num_pairs());
    let heldout_pairs: usize = split.heldout.iter().map(Vec::len).sum();
    let _ = writeln!(text, "heldout_pairs\t{heldout_pairs}");
    let _ = writeln!(text, "evaluable_baskets\t{}", split.num_evaluable());
    out.write("stats.txt", &text)?;
    out.write("stats.json", &serde_json::to_string_pretty(&stats).expect("stats serialize"))?;

    println!("prepared {} -> {}", a.input.display(), split_path.display());
    print!("{text}");
    Ok(())
}

fn render_train_log(log: &[crate::trainer::EpochRecord]) -> String {
    let mut text = String::from("epoch\tmain\tcross\twithin\ttotal\twall_secs\teval_recall\n");
    for r in log {
        let eval = r.eval_recall.map_or(String::from("-"), |v| v.to_string());
        let _ = writeln!(text, "{}\t{}\t{}\t{}\t{}\t{:.3}\t{}", r.epoch, r.main, r.cross, r.within, r.total, r.wall_secs, eval);
    }
    text
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let out = OutDir::acquire(&a.out)?;
    write_manifest(
        &out,
        "train",
        cfg.seed,
        &[("split", a.split.as_path())],
        &["checkpoint.bin", "train_log.tsv", "config.txt"],
        Some(&cfg),
        &[],
    )?;
    let split = load_split(&a.split)?;
    out.write("config.txt", &cfg.to_text())?;

    let result = fit(&split, &cfg)?;
    save_checkpoint(out.dir.join("checkpoint.bin"), &result.checkpoint)?;
    if let Some(best) = &result.best {
        let best_ck = Checkpoint {
            config: cfg.clone(),
            epoch: best.epoch + 1,
            base: best.base.clone(),
            sampling_pos: 0,
            augmentation_pos: 0,
        };
        save_checkpoint(out.dir.join("checkpoint_best.bin"), &best_ck)?;
        println!("best recall@{} = {} at epoch {}", cfg.eval_k, best.recall, best.epoch);
    }
    out.write("train_log.tsv", &render_train_log(&result.log))?;
    if let Some(last) = result.log.last() {
        println!(
            "trained {} epochs: main={:.4} cross={:.4} within={:.4} total={:.4}",
            result.log.len(),
            last.main,
            last.cross,
            last.within,
            last.total
        );
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    if a.k.is_empty() {
        return Err(Error::Config("need at least one K".into()));
    }
    let out = OutDir::acquire(&a.out)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    write_manifest(
        &out,
        "evaluate",
        ck.config.seed,
        &[("checkpoint", a.checkpoint.as_path()), ("split", a.split.as_path())],
        &["metrics.tsv", "metrics.json"],
        Some(&ck.config),
        &[("k_list", a.k.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","))],
    )?;
    let split = load_split(&a.split)?;
    let report = evaluate(&ck.base, &ck.config, &split, &a.k)?;
    out.write("metrics.tsv", &report.to_tsv())?;
    out.write("metrics.json", &report.to_json())?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let base_cfg = a.config.resolve()?;
    let out = OutDir::acquire(&a.out)?;
    write_manifest(
        &out,
        "ablate",
        base_cfg.seed,
        &[("split", a.split.as_path())],
        &["ablation.tsv"],
        Some(&base_cfg),
        &[("presets", a.presets.iter().map(|p| p.name()).collect::<Vec<_>>().join(","))],
    )?;
    let split = load_split(&a.split)?;

    let mut combined = String::from("preset\tk\trecall\tprecision\thr\tndcg\n");
    for preset in &a.presets {
        let mut cfg = base_cfg.clone();
        preset.apply(&mut cfg);
        cfg.validate()?;
        let result = fit(&split, &cfg)?;
        let report = evaluate(&result.checkpoint.base, &cfg, &split, &a.k)?;
        out.write(&format!("{}.metrics.tsv", preset.name()), &report.to_tsv())?;
        out.write(&format!("{}.metrics.json", preset.name()), &report.to_json())?;
        for row in &report.rows {
            let _ = writeln!(
                combined,
                "{}\t{}\t{}\t{}\t{}\t{}",
                preset.name(),
                row.k,
                row.recall,
                row.precision,
                row.hr,
                row.ndcg
            );
        }
        println!("{}: done", preset.name());
    }
    out.write("ablation.tsv", &combined)?;
    Ok(())
}

fn cmd_noise_sweep(a: NoiseSweepArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    if a.ratios.is_empty() || a.seeds.is_empty() {
        return Err(Error::Config("need at least one ratio and one seed".into()));
    }
    for r in &a.ratios {
        if *r < 0.0 {
            return Err(Error::Config(format!("noise ratio must be >= 0, got {r}")));
        }
    }
    let out = OutDir::acquire(&a.out)?;
    write_manifest(
        &out,
        "noise-sweep",
        cfg.seed,
        &[("split", a.split.as_path())],
        &["curves.tsv"],
        Some(&cfg),
        &[
            ("ratios", a.ratios.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")),
            ("seeds", a.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")),
        ],
    )?;
    let split = load_split(&a.split)?;

    let records = noise_sweep(&split, &cfg, &a.ratios, &a.seeds, &a.k)?;
    let mut curves = String::from("ratio\tseed\tvariant\tk\trecall\tprecision\thr\tndcg\n");
    for rec in &records {
        out.write(&format!("noise_r{}_s{}_{}.metrics.tsv", rec.ratio, rec.seed, rec.variant), &rec.report.to_tsv())?;
        for row in &rec.report.rows {
            let _ = writeln!(
                curves,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                rec.ratio, rec.seed, rec.variant, row.k, row.recall, row.precision, row.hr, row.ndcg
            );
        }
    }
    out.write("curves.tsv", &curves)?;
    println!("noise sweep wrote {} runs", records.len());
    Ok(())
}
