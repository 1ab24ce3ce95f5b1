//! Command-line front end: argument definitions, the JSON experiment config
//! and one function per subcommand.
//!
//! Exit codes:
//!
//! | code | meaning                                           |
//! |------|---------------------------------------------------|
//! | 0    | success                                           |
//! | 2    | bad command line (unknown flag, missing value)    |
//! | 3    | file could not be read or written                 |
//! | 4    | malformed input file or config                    |
//! | 5    | invalid argument or inconsistent inputs           |
//! | 6    | numerical failure (non-finite values, divergence) |

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{fit_pca, tp_fp_scatter, write_scatter_csv};
use crate::attack::{robustness_report, AgentConfig, LossMode, RobustnessReport};
use crate::bench::{pareto_table, run_bench, write_pareto_csv};
use crate::error::{Error, Result};
use crate::index::{build, label_fp, IndexSpec};
use crate::rng::derive_seed;
use crate::vecdata::{
    exact_ground_truth, load_ground_truth, load_vectors, make_synthetic, save_ground_truth,
    save_vectors, split, GroundTruth, VectorFormat, VectorSet,
};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;
pub const EXIT_INVALID: i32 = 5;
pub const EXIT_NUMERIC: i32 = 6;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::Header(_) | Error::Row { .. } | Error::Config(_) => EXIT_FORMAT,
        Error::DimensionMismatch { .. } | Error::InvalidArgument(_) => EXIT_INVALID,
        Error::NonFinite(_) | Error::Divergence { .. } => EXIT_NUMERIC,
    }
}

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  2  bad command line
  3  file could not be read or written
  4  malformed input file or config
  5  invalid argument or inconsistent inputs
  6  numerical failure (non-finite values, training divergence)";

#[derive(Debug, Parser)]
#[command(name = "knnrobust", version, about = "Robustness testing for k-nearest-neighbor search", after_help = EXIT_HELP)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Root seed; every random component derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for ground truth and jitter evaluation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a clustered Gaussian dataset.
    #[command(after_help = EXIT_HELP)]
    Synth(SynthArgs),
    /// Compute exact k-nearest neighbors of queries against a base set.
    #[command(after_help = EXIT_HELP)]
    Truth(TruthArgs),
    /// Measure recall and throughput of index configurations.
    #[command(after_help = EXIT_HELP)]
    Bench(BenchArgs),
    /// Train the actor-critic attacker against a subject index.
    #[command(after_help = EXIT_HELP)]
    Attack(AttackArgs),
    /// Project queries onto principal components, labelled TP/FP.
    #[command(after_help = EXIT_HELP)]
    Pca(PcaArgs),
    /// Summarize a robustness report as text.
    #[command(after_help = EXIT_HELP)]
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Per-coordinate standard deviation inside a cluster.
    #[arg(long)]
    pub spread: Option<f64>,
    /// Output file; `.csv` writes text, anything else the binary format.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TruthArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Precomputed ground truth; computed on the fly when absent.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Index spec such as `kdforest:num_trees=4,max_checks=64`; repeatable.
    #[arg(long = "spec")]
    pub specs: Vec<IndexSpec>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// CSV table of recall, QPS, build time and Pareto flag.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Attack points.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Index under attack, e.g. `kdforest:num_trees=4,max_checks=10`.
    #[arg(long)]
    pub subject: Option<IndexSpec>,
    /// Comma-separated neighbor counts to attack with.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long)]
    pub jitter_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub loss_mode: Option<LossMode>,
    /// Use only the first N attack points.
    #[arg(long)]
    pub points: Option<usize>,
    /// Output directory for `trace.jsonl` and `report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Index whose answers label each query TP or FP.
    #[arg(long)]
    pub subject: Option<IndexSpec>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Scatter CSV with columns pc1, pc2, is_fp.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `report.json` written by `attack`.
    #[arg(long)]
    pub report: PathBuf,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Where base vectors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    File {
        path: PathBuf,
    },
    Synthetic {
        n: usize,
        d: usize,
        clusters: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_spread() -> f64 {
    1.0
}

/// Where queries (or attack points) come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum QuerySource {
    File { path: PathBuf },
    /// Hold out `count` random points of the dataset.
    Split { count: usize },
}

/// JSON experiment description. Only `seed` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub dataset: Option<DatasetSource>,
    #[serde(default)]
    pub queries: Option<QuerySource>,
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub specs: Vec<IndexSpec>,
    #[serde(default)]
    pub subject: Option<IndexSpec>,
    #[serde(default)]
    pub k_values: Vec<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub agent: Option<AgentConfig>,
    #[serde(default)]
    pub attack_points: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn check_paths(&self) -> Result<()> {
        let mut paths: Vec<&Path> = Vec::new();
        if let Some(DatasetSource::File { path }) = &self.dataset {
            paths.push(path);
        }
        if let Some(QuerySource::File { path }) = &self.queries {
            paths.push(path);
        }
        if let Some(p) = &self.truth {
            paths.push(p);
        }
        for p in paths {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

/// Loaded config plus resolved root seed.
struct Context {
    config: Option<ExperimentConfig>,
    seed: Option<u64>,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let config = common.config.as_deref().map(ExperimentConfig::load).transpose()?;
        let seed = common.seed.or(config.as_ref().map(|c| c.seed));
        Ok(Context { config, seed })
    }

    /// Commands that draw random numbers refuse to run without a seed.
    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (--seed or config \"seed\")".into()))
    }

    fn cfg<T>(&self, f: impl FnOnce(&ExperimentConfig) -> Option<T>) -> Option<T> {
        self.config.as_ref().and_then(f)
    }

    fn dataset(&self, flag: Option<&Path>) -> Result<VectorSet> {
        if let Some(p) = flag {
            return load_vectors(p, VectorFormat::from_path(p));
        }
        match self.cfg(|c| c.dataset.clone()) {
            Some(DatasetSource::File { path }) => load_vectors(&path, VectorFormat::from_path(&path)),
            Some(DatasetSource::Synthetic {
                n,
                d,
                clusters,
                spread,
            }) => make_synthetic(n, d, clusters, spread, derive_seed(self.seed()?, "synth")),
            None => Err(Error::Config("no base vectors (--base or config \"dataset\")".into())),
        }
    }

    /// Base set and queries; a `split` query source removes the queries from the base.
    fn base_and_queries(
        &self,
        base_flag: Option<&Path>,
        queries_flag: Option<&Path>,
    ) -> Result<(VectorSet, VectorSet)> {
        let data = self.dataset(base_flag)?;
        if let Some(p) = queries_flag {
            return Ok((data, load_vectors(p, VectorFormat::from_path(p))?));
        }
        match self.cfg(|c| c.queries.clone()) {
            Some(QuerySource::File { path }) => {
                let q = load_vectors(&path, VectorFormat::from_path(&path))?;
                Ok((data, q))
            }
            Some(QuerySource::Split { count }) => split(&data, count, derive_seed(self.seed()?, "split")),
            None => Err(Error::Config("no queries (--queries or config \"queries\")".into())),
        }
    }

    fn truth(
        &self,
        flag: Option<&Path>,
        base: &VectorSet,
        queries: &VectorSet,
        k: usize,
    ) -> Result<GroundTruth> {
        match flag.map(Path::to_path_buf).or(self.cfg(|c| c.truth.clone())) {
            Some(p) => {
                let gt = load_ground_truth(&p)?;
                if gt.n() != queries.n() || gt.k() != k {
                    return Err(Error::InvalidArgument(format!(
                        "ground truth is {}x{}, expected {}x{k}",
                        gt.n(),
                        gt.k(),
                        queries.n()
                    )));
                }
                Ok(gt)
            }
            None => exact_ground_truth(base, queries, k),
        }
    }

    fn out(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or(self.cfg(|c| c.out.clone()))
            .ok_or_else(|| Error::Config("no output path (--out or config \"out\")".into()))
    }

    fn k(&self, flag: Option<usize>) -> Result<usize> {
        flag.or(self.cfg(|c| c.k_values.first().copied()))
            .or(self.cfg(|c| c.agent.as_ref().map(|a| a.k)))
            .ok_or_else(|| Error::Config("no k (--k or config \"k_values\")".into()))
    }

    fn subject(&self, flag: Option<&IndexSpec>) -> Result<IndexSpec> {
        flag.cloned()
            .or(self.cfg(|c| c.subject.clone()))
            .ok_or_else(|| Error::Config("no subject index (--subject or config \"subject\")".into()))
    }

    fn epsilon(&self, flag: Option<f64>) -> f64 {
        flag.or(self.cfg(|c| c.epsilon)).unwrap_or(0.0)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.common.threads {
        if t == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        // a second initialisation (tests calling `run` repeatedly) is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let ctx = Context::new(&cli.common)?;
    match cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Truth(a) => cmd_truth(a),
        Command::Bench(a) => cmd_bench(&ctx, a),
        Command::Attack(a) => cmd_attack(&ctx, a),
        Command::Pca(a) => cmd_pca(&ctx, a),
        Command::Report(a) => cmd_report(a),
    }
}

fn cmd_synth(ctx: &Context, a: SynthArgs) -> Result<()> {
    let from_cfg = ctx.cfg(|c| match &c.dataset {
        Some(DatasetSource::Synthetic {
            n,
            d,
            clusters,
            spread,
        }) => Some((*n, *d, *clusters, *spread)),
        _ => None,
    });
    let missing = |f: &str| Error::Config(format!("synth needs --{f}"));
    let n = a.n.or(from_cfg.map(|c| c.0)).ok_or_else(|| missing("n"))?;
    let d = a.d.or(from_cfg.map(|c| c.1)).ok_or_else(|| missing("d"))?;
    let clusters = a
        .clusters
        .or(from_cfg.map(|c| c.2))
        .ok_or_else(|| missing("clusters"))?;
    let spread = a.spread.or(from_cfg.map(|c| c.3)).unwrap_or(1.0);
    let set = make_synthetic(n, d, clusters, spread, derive_seed(ctx.seed()?, "synth"))?;
    save_vectors(&set, &a.out, VectorFormat::from_path(&a.out))
}

fn cmd_truth(a: TruthArgs) -> Result<()> {
    let base = load_vectors(&a.base, VectorFormat::from_path(&a.base))?;
    let queries = load_vectors(&a.queries, VectorFormat::from_path(&a.queries))?;
    let gt = exact_ground_truth(&base, &queries, a.k)?;
    save_ground_truth(&gt, &a.out)
}

fn cmd_bench(ctx: &Context, a: BenchArgs) -> Result<()> {
    let (base, queries) = ctx.base_and_queries(a.base.as_deref(), a.queries.as_deref())?;
    let k = ctx.k(a.k)?;
    let truth = ctx.truth(a.truth.as_deref(), &base, &queries, k)?;
    let specs = if a.specs.is_empty() {
        ctx.cfg(|c| Some(c.specs.clone())).unwrap_or_default()
    } else {
        a.specs
    };
    if specs.is_empty() {
        return Err(Error::Config("no index specs (--spec or config \"specs\")".into()));
    }
    let runs = run_bench(&base, &queries, &truth, &specs, k, ctx.epsilon(a.epsilon))?;
    for r in runs.iter().filter(|r| r.failed()) {
        eprintln!("{}: failed: {}", r.spec, r.error.as_deref().unwrap_or(""));
    }
    let table = pareto_table(&runs)?;
    match ctx.out(a.out.as_deref()) {
        Ok(p) => {
            let mut w = create(&p)?;
            write_pareto_csv(&table, &mut w)?;
            w.flush()?;
        }
        Err(_) => write_pareto_csv(&table, &mut std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_attack(ctx: &Context, a: AttackArgs) -> Result<()> {
    let (base, mut points) = ctx.base_and_queries(a.base.as_deref(), a.queries.as_deref())?;
    if let Some(limit) = a.points.or(ctx.cfg(|c| c.attack_points)) {
        if limit == 0 {
            return Err(Error::InvalidArgument("--points must be at least 1".into()));
        }
        let keep: Vec<usize> = (0..limit.min(points.n())).collect();
        points = points.select(&keep)?;
    }
    let subject = build(&ctx.subject(a.subject.as_ref())?, &base)?;
    let mut agent = ctx.cfg(|c| c.agent.clone()).unwrap_or_default();
    agent.seed = ctx.seed()?;
    if let Some(j) = a.jitter_size {
        agent.jitter_size = j;
    }
    if let Some(m) = a.max_steps {
        agent.max_steps = m;
    }
    if let Some(l) = a.loss_mode {
        agent.loss_mode = l;
    }
    let k_values = if !a.k.is_empty() {
        a.k
    } else {
        ctx.cfg(|c| Some(c.k_values.clone()))
            .filter(|v| !v.is_empty())
            .unwrap_or_else(|| vec![agent.k])
    };
    let out = ctx.out(a.out.as_deref())?;
    let run = robustness_report(&points, &base, &subject, &agent, &k_values)?;
    for s in &run.report.per_k {
        eprintln!(
            "k={}: mean fp fraction {:.4}, fully adversarial {}/{}",
            s.k,
            s.mean_fp_fraction,
            s.fully_adversarial,
            s.points.len()
        );
    }
    fs::create_dir_all(&out)?;
    let mut w = create(&out.join("trace.jsonl"))?;
    run.write_trace(&mut w)?;
    w.flush()?;
    let mut w = create(&out.join("report.json"))?;
    serde_json::to_writer_pretty(&mut w, &run.report).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn cmd_pca(ctx: &Context, a: PcaArgs) -> Result<()> {
    let (base, queries) = ctx.base_and_queries(a.base.as_deref(), a.queries.as_deref())?;
    let k = ctx.k(a.k)?;
    let truth = ctx.truth(a.truth.as_deref(), &base, &queries, k)?;
    let subject = build(&ctx.subject(a.subject.as_ref())?, &base)?;
    let eps = ctx.epsilon(a.epsilon);
    let labels = (0..queries.n())
        .map(|i| label_fp(i, &subject.query(queries.row(i), k)?, truth.row(i), eps))
        .collect::<Result<Vec<_>>>()?;
    let model = fit_pca(&queries, 2.min(queries.d()))?;
    let table = tp_fp_scatter(&queries, &labels, &model)?;
    let fp = labels.iter().filter(|l| l.is_fp).count();
    eprintln!(
        "{fp}/{} false positives; best single-threshold accuracy {:.4}{}",
        labels.len(),
        table.separability,
        if table.single_class { " (single class)" } else { "" }
    );
    let out = ctx.out(a.out.as_deref())?;
    let mut w = create(&out)?;
    write_scatter_csv(&table, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Text summary of a robustness report.
pub fn summarize(report: &RobustnessReport) -> String {
    let mut s = format!(
        "subject {} ({}), {} jitters per step\n",
        report.subject,
        if report.subject_exact { "exact" } else { "approximate" },
        report.jitter_size
    );
    s += "k\tmean_fp_count\tmean_fp_fraction\tmean_mu_distance\tmean_variance\tfully_adversarial\n";
    for k in &report.per_k {
        s += &format!(
            "{}\t{:.2}\t{:.4}\t{:.4}\t{:.6}\t{}/{}\n",
            k.k,
            k.mean_fp_count,
            k.mean_fp_fraction,
            k.mean_mu_distance,
            k.mean_variance,
            k.fully_adversarial,
            k.points.len()
        );
    }
    let broken = report.min_k_fully_adversarial.iter().flatten().count();
    s += &format!(
        "points fully attacked at some k: {broken}/{}\n",
        report.min_k_fully_adversarial.len()
    );
    s
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.report)?;
    let report: RobustnessReport = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", a.report.display())))?;
    let summary = summarize(&report);
    match a.out {
        Some(p) => {
            let mut w = create(&p)?;
            w.write_all(summary.as_bytes())?;
            w.flush()?;
        }
        None => print!("{summary}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_lists_exit_codes() {
        let help = Cli::command().render_long_help().to_string();
        for code in ["2  bad command line", "6  numerical failure"] {
            assert!(help.contains(code), "{help}");
        }
    }

    #[test]
    fn exit_codes_are_distinct_per_category() {
        let errs = [
            Error::Io(std::io::Error::other("x")),
            Error::Header("x".into()),
            Error::InvalidArgument("x".into()),
            Error::NonFinite("x".into()),
        ];
        let codes: Vec<i32> = errs.iter().map(exit_code).collect();
        assert_eq!(codes, vec![EXIT_IO, EXIT_FORMAT, EXIT_INVALID, EXIT_NUMERIC]);
    }

    #[test]
    fn config_requires_seed() {
        let err = serde_json::from_str::<ExperimentConfig>("{}").unwrap_err();
        assert!(err.to_string().contains("seed"));
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"seed": 3, "dataset": {"synthetic": {"n": 10, "d": 2, "clusters": 2}},
                "queries": {"split": {"count": 2}}, "subject": "kdforest:num_trees=1,max_checks=4",
                "k_values": [1, 2], "agent": {"max_steps": 3}}"#,
        )
        .unwrap();
        assert_eq!(cfg.agent.unwrap().max_steps, 3);
        assert_eq!(cfg.subject.unwrap().label(), "kdforest:max_checks=4,num_trees=1");
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"seed": 1, "sed": 2}"#).is_err());
    }

    #[test]
    fn attack_k_list_parses() {
        let cli = Cli::try_parse_from([
            "knnrobust", "attack", "--k", "5,10,20", "--loss-mode", "standard", "--seed", "4",
        ])
        .unwrap();
        match cli.command {
            Command::Attack(a) => {
                assert_eq!(a.k, vec![5, 10, 20]);
                assert_eq!(a.loss_mode, Some(LossMode::Standard));
            }
            _ => panic!("wrong subcommand"),
        }
        assert_eq!(cli.common.seed, Some(4));
    }
}
