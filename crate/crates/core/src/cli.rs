//! Batch command-line front end.
//!
//! Every command resolves its parameters from built-in defaults, then an
//! optional `key = value` config file, then flags, and writes the result to
//! `config.lock` in the output directory. Passing that file back through
//! `--config` replays the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::baseline::{cut_k, euclidean_distances, linkage_cluster, subgroup_means, Linkage};
use crate::cluster::ClusterAssignment;
use crate::data::{
    assign_splits, filter_min_group_size, load_csv, write_csv, CsvSchema, Dataset, SplitAssignment,
    SplitRatios,
};
use crate::error::{PhcError, Result};
use crate::evaluation::{
    evaluate_clustering, pr_points, roc_points, write_pr_csv, write_roc_csv, Evaluation,
    MetricReport,
};
use crate::glm::GlmOptions;
use crate::phc::{cut_tree, export_dendrogram, import_dendrogram, run_phc, Dendrogram, PhcConfig};
use crate::simulation::{simulate, SimConfig};

pub const EXIT_IO: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "phc",
    version,
    about = "Predictive hierarchical clustering of data subgroups"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a known block clustering.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Build the merge tree for a dataset.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Cut a saved tree into a cluster assignment.
    Cut {
        #[command(flatten)]
        common: CommonArgs,
        /// Tree JSON written by `fit`.
        #[arg(long)]
        dendrogram: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score one or more cluster assignments on validation rows.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Assignment CSV (`subgroup_id,cluster_id`); repeat for several.
        #[arg(long = "assignment")]
        assignments: Vec<PathBuf>,
    },
    /// Tree cut versus linkage and per-subgroup baselines.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_parser = ["complete", "average"])]
        linkage: Option<String>,
    },
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Flat `key = value` file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct SimArgs {
    #[arg(long)]
    pub n_subgroups: Option<usize>,
    #[arg(long)]
    pub n_true_clusters: Option<usize>,
    #[arg(long)]
    pub rows_per_subgroup: Option<usize>,
    #[arg(long)]
    pub n_features: Option<usize>,
    #[arg(long)]
    pub binary_fraction: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub group_column: Option<String>,
    #[arg(long)]
    pub outcome_column: Option<String>,
    #[arg(long)]
    pub min_group_size: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub n_lambda: Option<usize>,
    #[arg(long)]
    pub eps_ratio: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub cv_tol: Option<f64>,
    /// Rescore every pair each iteration (diagnostic).
    #[arg(long)]
    pub no_cache: bool,
}

const COMMON_DEFAULTS: &[(&str, &str)] = &[("out", "."), ("seed", "0"), ("threads", "0")];

const SIM_DEFAULTS: &[(&str, &str)] = &[
    ("n_subgroups", "20"),
    ("n_true_clusters", "4"),
    ("rows_per_subgroup", "1000"),
    ("n_features", "30"),
    ("binary_fraction", "0.5"),
];

const DATA_DEFAULTS: &[(&str, &str)] = &[
    ("input", ""),
    ("group_column", "group"),
    ("outcome_column", "y"),
    ("min_group_size", "500"),
    ("validation_fraction", "0.2"),
    ("train_fraction", "0.6666666666666666"),
];

const MODEL_DEFAULTS: &[(&str, &str)] = &[
    ("alpha", "1"),
    ("folds", "5"),
    ("n_lambda", "50"),
    ("eps_ratio", "0.001"),
    ("tol", "0.0000001"),
    ("cv_tol", "0.00001"),
    ("cache", "true"),
];

/// Effective parameters of one command, keyed by flag name with `_`.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    command: String,
    values: BTreeMap<String, String>,
}

impl Settings {
    fn new(command: &str, defaults: &[&[(&str, &str)]]) -> Self {
        let values = defaults
            .iter()
            .flat_map(|d| d.iter())
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Settings {
            command: command.into(),
            values,
        }
    }

    /// Applies a config file. Unknown keys are rejected.
    fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| PhcError::io(path, e))?;
        for (k, v) in parse_config(&text, path)? {
            if k == "command" {
                continue;
            }
            if !self.values.contains_key(&k) {
                return Err(PhcError::InvalidInput(format!(
                    "{}: key `{k}` does not apply to `{}`",
                    path.display(),
                    self.command
                )));
            }
            self.values.insert(k, v);
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.values.insert(key.into(), v.to_string());
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .values
            .get(key)
            .ok_or_else(|| PhcError::InvalidInput(format!("missing setting `{key}`")))?;
        raw.parse()
            .map_err(|_| PhcError::InvalidInput(format!("bad value for `{key}`: `{raw}`")))
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        let raw: String = self.get(key)?;
        if raw.is_empty() {
            return Err(PhcError::InvalidInput(format!(
                "`--{}` is required",
                key.replace('_', "-")
            )));
        }
        Ok(PathBuf::from(raw))
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let out = self.path("out")?;
        std::fs::create_dir_all(&out).map_err(|e| PhcError::io(&out, e))?;
        Ok(out)
    }

    fn threads(&self) -> Result<Option<usize>> {
        Ok(match self.get::<usize>("threads")? {
            0 => None,
            n => Some(n),
        })
    }

    /// The `config.lock` text: the command, then every key sorted.
    pub fn to_lock(&self) -> String {
        let mut out = format!("command = {}\n", self.command);
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn write_lock(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.lock");
        std::fs::write(&path, self.to_lock()).map_err(|e| PhcError::io(&path, e))
    }

    fn sim_config(&self) -> Result<SimConfig> {
        Ok(SimConfig {
            n_subgroups: self.get("n_subgroups")?,
            n_true_clusters: self.get("n_true_clusters")?,
            rows_per_subgroup: self.get("rows_per_subgroup")?,
            n_features: self.get("n_features")?,
            binary_fraction: self.get("binary_fraction")?,
            seed: self.get("seed")?,
            theta_override: None,
        })
    }

    fn phc_config(&self) -> Result<PhcConfig> {
        Ok(PhcConfig {
            alpha: self.get("alpha")?,
            glm: GlmOptions {
                n_lambda: self.get("n_lambda")?,
                eps_ratio: self.get("eps_ratio")?,
                k_folds: self.get("folds")?,
                tol: self.get("tol")?,
                cv_tol: self.get("cv_tol")?,
                ..GlmOptions::default()
            },
            seed: self.get("seed")?,
            threads: self.threads()?,
            use_cache: self.get("cache")?,
        })
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// keys may be written with `-` or `_`.
pub fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| PhcError::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: format!("expected key = value, got `{line}`"),
        })?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

fn resolve_common(s: &mut Settings, common: &CommonArgs) -> Result<()> {
    if let Some(path) = &common.config {
        s.merge_file(path)?;
    }
    s.set("out", common.out.as_ref().map(|p| p.display()));
    s.set("seed", common.seed);
    s.set("threads", common.threads);
    Ok(())
}

fn apply_data(s: &mut Settings, d: &DataArgs) {
    s.set("input", d.input.as_ref().map(|p| p.display()));
    s.set("group_column", d.group_column.clone());
    s.set("outcome_column", d.outcome_column.clone());
    s.set("min_group_size", d.min_group_size);
    s.set("validation_fraction", d.validation_fraction);
    s.set("train_fraction", d.train_fraction);
}

fn apply_model(s: &mut Settings, m: &ModelArgs) {
    s.set("alpha", m.alpha);
    s.set("folds", m.folds);
    s.set("n_lambda", m.n_lambda);
    s.set("eps_ratio", m.eps_ratio);
    s.set("tol", m.tol);
    s.set("cv_tol", m.cv_tol);
    if m.no_cache {
        s.set("cache", Some(false));
    }
}

/// Resolves the effective settings of a parsed command line.
pub fn resolve(command: &Command) -> Result<Settings> {
    let mut s;
    match command {
        Command::Simulate { common, sim } => {
            s = Settings::new("simulate", &[COMMON_DEFAULTS, SIM_DEFAULTS]);
            resolve_common(&mut s, common)?;
            s.set("n_subgroups", sim.n_subgroups);
            s.set("n_true_clusters", sim.n_true_clusters);
            s.set("rows_per_subgroup", sim.rows_per_subgroup);
            s.set("n_features", sim.n_features);
            s.set("binary_fraction", sim.binary_fraction);
        }
        Command::Fit {
            common,
            data,
            model,
        } => {
            s = Settings::new("fit", &[COMMON_DEFAULTS, DATA_DEFAULTS, MODEL_DEFAULTS]);
            resolve_common(&mut s, common)?;
            apply_data(&mut s, data);
            apply_model(&mut s, model);
        }
        Command::Cut {
            common,
            dendrogram,
            threshold,
        } => {
            s = Settings::new(
                "cut",
                &[COMMON_DEFAULTS, &[("dendrogram", ""), ("threshold", "0.5")]],
            );
            resolve_common(&mut s, common)?;
            s.set("dendrogram", dendrogram.as_ref().map(|p| p.display()));
            s.set("threshold", *threshold);
        }
        Command::Evaluate {
            common,
            data,
            model,
            assignments,
        } => {
            s = Settings::new(
                "evaluate",
                &[
                    COMMON_DEFAULTS,
                    DATA_DEFAULTS,
                    MODEL_DEFAULTS,
                    &[("assignment", "")],
                ],
            );
            resolve_common(&mut s, common)?;
            apply_data(&mut s, data);
            apply_model(&mut s, model);
            if !assignments.is_empty() {
                let joined: Vec<String> = assignments
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect();
                s.set("assignment", Some(joined.join(",")));
            }
        }
        Command::Compare {
            common,
            data,
            model,
            threshold,
            linkage,
        } => {
            s = Settings::new(
                "compare",
                &[
                    COMMON_DEFAULTS,
                    DATA_DEFAULTS,
                    MODEL_DEFAULTS,
                    &[("threshold", "0.5"), ("linkage", "complete")],
                ],
            );
            resolve_common(&mut s, common)?;
            apply_data(&mut s, data);
            apply_model(&mut s, model);
            s.set("threshold", *threshold);
            s.set("linkage", linkage.clone());
        }
    }
    Ok(s)
}

/// A loaded, filtered, normal-scored and split dataset.
pub struct Prepared {
    pub dataset: Dataset,
    pub splits: SplitAssignment,
}

/// Load, drop small subgroups, normal-score continuous columns, split.
pub fn prepare(s: &Settings) -> Result<Prepared> {
    let schema = CsvSchema {
        group_column: s.get("group_column")?,
        outcome_column: s.get("outcome_column")?,
    };
    let raw = load_csv(s.path("input")?, &schema)?;
    let (filtered, report) = filter_min_group_size(&raw, s.get("min_group_size")?)?;
    log::info!(
        "kept {}/{} subgroups, {}/{} rows ({:.1}%)",
        report.retained_groups,
        report.total_groups,
        report.retained_rows,
        report.total_rows,
        100.0 * report.retained_fraction()
    );
    let dataset = filtered.with_normal_scores();
    let ratios = SplitRatios {
        validation_fraction: s.get("validation_fraction")?,
        train_fraction: s.get("train_fraction")?,
    };
    let splits = assign_splits(&dataset, ratios, s.get("seed")?)?;
    Ok(Prepared { dataset, splits })
}

/// One line per merge: members by label, `r` and both log-likelihoods.
pub fn merge_log(d: &Dendrogram) -> String {
    let names = |members: &[usize]| {
        members
            .iter()
            .map(|&g| d.subgroup_labels[g].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = String::new();
    for (step, &id) in d.merge_order.iter().enumerate() {
        let node = d.node(id);
        let [l, r] = node.children.expect("merge nodes have children");
        let h2 = d.node(l).log_p_tree + d.node(r).log_p_tree;
        let _ = writeln!(
            out,
            "{} [{}] + [{}] r={:.6} log_p_h1={:.6} log_p_h2={:.6}",
            step + 1,
            names(&d.node(l).members),
            names(&d.node(r).members),
            node.r,
            node.log_p_h1,
            h2
        );
    }
    if let crate::phc::RunStatus::Aborted { reason } = &d.status {
        let _ = writeln!(out, "aborted: {reason}");
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| PhcError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_curves(dir: &Path, stem: &str, eval: &Evaluation) -> Result<()> {
    write_roc_csv(
        &roc_points(&eval.predictions)?,
        dir.join(format!("roc_{stem}.csv")),
    )?;
    write_pr_csv(
        &pr_points(&eval.predictions)?,
        dir.join(format!("pr_{stem}.csv")),
    )
}

fn fit_tree(s: &Settings, prep: &Prepared, out: &Path) -> Result<Dendrogram> {
    let tree = run_phc(&prep.dataset, &prep.splits, &s.phc_config()?)?;
    export_dendrogram(&tree, out.join("dendrogram.json"))?;
    write_text(&out.join("merges.log"), &merge_log(&tree))?;
    prep.splits.write_manifest(out.join("splits.csv"))?;
    Ok(tree)
}

/// Row of the comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub n_clusters: usize,
    pub auroc: f64,
    pub auprc: f64,
    pub report: MetricReport,
}

/// Runs one resolved command.
pub fn execute(command: &Command, s: &Settings) -> Result<()> {
    let out = s.out_dir()?;
    s.write_lock(&out)?;
    match command {
        Command::Simulate { .. } => {
            let (ds, truth) = simulate(&s.sim_config()?)?;
            write_csv(&ds, out.join("data.csv"))?;
            truth.write_csv(ds.group_labels(), out.join("truth.csv"))?;
            log::info!("wrote {} rows in {} subgroups", ds.n_rows(), ds.n_groups());
        }
        Command::Fit { .. } => {
            let prep = prepare(s)?;
            let tree = fit_tree(s, &prep, &out)?;
            log::info!(
                "{} merges, {} candidate fits",
                tree.merge_order.len(),
                tree.candidate_fits
            );
        }
        Command::Cut { .. } => {
            let tree = import_dendrogram(s.path("dendrogram")?)?;
            let cut = cut_tree(&tree, s.get("threshold")?);
            cut.write_csv(&tree.subgroup_labels, out.join("assignment.csv"))?;
            log::info!("{} clusters", cut.n_clusters());
        }
        Command::Evaluate { .. } => {
            let prep = prepare(s)?;
            let glm = s.phc_config()?.glm;
            let seed: u64 = s.get("seed")?;
            let list: String = s.get("assignment")?;
            if list.is_empty() {
                return Err(PhcError::InvalidInput("`--assignment` is required".into()));
            }
            for path in list.split(',').map(PathBuf::from) {
                let assignment = ClusterAssignment::read_csv(&path, prep.dataset.group_labels())?;
                let eval =
                    evaluate_clustering(&prep.dataset, &prep.splits, &assignment, &glm, seed)?;
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "assignment".into());
                write_json(&out.join(format!("report_{stem}.json")), &eval.report)?;
                write_curves(&out, &stem, &eval)?;
                log::info!(
                    "{stem}: AUROC {:.4}, AUPRC {:.4}",
                    eval.report.auroc,
                    eval.report.auprc
                );
            }
        }
        Command::Compare { .. } => {
            let prep = prepare(s)?;
            let cfg = s.phc_config()?;
            let seed: u64 = s.get("seed")?;
            let labels = prep.dataset.group_labels();
            let tree = fit_tree(s, &prep, &out)?;
            let phc_cut = cut_tree(&tree, s.get("threshold")?);
            let linkage: Linkage = s.get::<String>("linkage")?.parse()?;
            let means = subgroup_means(&prep.dataset);
            let link_tree = linkage_cluster(&euclidean_distances(means.view()), linkage)?;
            link_tree.export(labels, out.join("linkage_dendrogram.json"))?;
            let link_cut = cut_k(&link_tree, phc_cut.n_clusters())?;
            let singletons = ClusterAssignment::singletons(prep.dataset.n_groups());

            let methods = [
                ("phc", phc_cut),
                (
                    if linkage == Linkage::Complete {
                        "complete_linkage"
                    } else {
                        "average_linkage"
                    },
                    link_cut,
                ),
                ("singleton", singletons),
            ];
            let mut rows = Vec::new();
            let mut csv = String::from("method,n_clusters,auroc,auprc\n");
            for (name, assignment) in methods {
                assignment.write_csv(labels, out.join(format!("assignment_{name}.csv")))?;
                let eval =
                    evaluate_clustering(&prep.dataset, &prep.splits, &assignment, &cfg.glm, seed)?;
                write_curves(&out, name, &eval)?;
                let _ = writeln!(
                    csv,
                    "{name},{},{},{}",
                    assignment.n_clusters(),
                    eval.report.auroc,
                    eval.report.auprc
                );
                log::info!(
                    "{name}: {} clusters, AUROC {:.4}",
                    assignment.n_clusters(),
                    eval.report.auroc
                );
                rows.push(ComparisonRow {
                    method: name.into(),
                    n_clusters: assignment.n_clusters(),
                    auroc: eval.report.auroc,
                    auprc: eval.report.auprc,
                    report: eval.report,
                });
            }
            write_json(&out.join("compare.json"), &rows)?;
            write_text(&out.join("compare.csv"), &csv)?;
        }
    }
    Ok(())
}

pub fn exit_code(err: &PhcError) -> u8 {
    match err {
        PhcError::Io { .. } => EXIT_IO,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

/// Resolves and runs a parsed command line inside a pool of the requested
/// size, mapping errors to exit codes.
pub fn run(cli: Cli) -> ExitCode {
    let result = resolve(&cli.command).and_then(|s| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(s.threads()?.unwrap_or(0))
            .build()
            .map_err(|e| PhcError::InvalidInput(format!("thread pool: {e}")))?;
        pool.install(|| execute(&cli.command, &s))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
