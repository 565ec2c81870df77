//! Experiment configuration, the leave-one-domain-out protocol and result files.
//!
//! A config file is flat `key = value` text. Namespaced keys use dots
//! (`stage1.lambda_c = 0.5`) and `#` starts a comment. Unknown keys are
//! rejected. See [`CONFIG_KEYS`] for the accepted set.
//!
//! Output layout of a training run:
//!
//! ```text
//! <output_dir>/metrics.csv                 one row per (variant, held-out domain, seed)
//! <output_dir>/timing.csv                  wall-clock seconds per run
//! <output_dir>/runs/<run_id>/objective.csv
//! <output_dir>/runs/<run_id>/stage1_<domain>.csv
//! <output_dir>/runs/<run_id>/checkpoint/
//! <output_dir>/STATUS                      only written when a run fails
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::attr::{write_loss_history, Stage1Outcome};
use crate::error::{Error, Result};
use crate::gcn::{BackboneClassifier, NodeClassifier};
use crate::graph::{load_domain, synth_multi_domain, write_edge_list, write_node_table, DomainGraph, SynthShiftConfig};
use crate::nn::{quantize_f32, Activation, OptimizerKind};
use crate::train::{evaluate_backbone, fit_stage1, load_backbone, train_with_stage1, Metrics, ObjectiveRecord, RunConfig, Variant};

/// Every key a config file may contain.
pub const CONFIG_KEYS: &[&str] = &[
    "dataset",
    "output_dir",
    "seed",
    "repeat",
    "variant",
    "test_domains",
    "alpha",
    "learning_rate",
    "optimizer",
    "epochs",
    "include_original",
    "train_fraction",
    "select_best",
    "files.dir",
    "files.domains",
    "files.num_classes",
    "synth.num_domains",
    "synth.nodes_per_domain",
    "synth.num_classes",
    "synth.feature_dim",
    "synth.intra_block_p",
    "synth.inter_block_p",
    "synth.attr_shift_scale",
    "synth.topo_shift_scale",
    "synth.class_sep",
    "synth.seed",
    "augment.num_generators",
    "augment.iterations",
    "augment.edits_per_node",
    "augment.learning_rate",
    "augment.reward_baseline",
    "stage1.lambda_x",
    "stage1.lambda_c",
    "stage1.lambda_s",
    "stage1.learning_rate",
    "stage1.max_epochs",
    "stage1.tolerance",
    "stage1.hidden_width",
    "stage1.semantic_dim",
    "stage1.variation_dim",
    "backbone.hidden_width",
    "backbone.num_layers",
    "backbone.activation",
    "backbone.dropout",
    "backbone.weight_decay",
];

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    /// Generated by [`synth_multi_domain`]. Repeat `r` draws with seed `synth.seed + r`.
    Synthetic {
        config: SynthShiftConfig,
        /// `synth.seed` if given; otherwise the base seed is used.
        explicit_seed: bool,
    },
    /// `<dir>/<name>.edges` and `<dir>/<name>.nodes` for each domain name.
    Files {
        dir: PathBuf,
        domains: Vec<String>,
        num_classes: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub dataset: Dataset,
    /// Domains held out in turn; `None` rotates through all of them.
    pub test_domains: Option<Vec<String>>,
    pub run: RunConfig,
    pub variants: Vec<Variant>,
    pub output_dir: PathBuf,
    /// Number of seeds; repeat `r` uses base seed `run.seed + r`.
    pub repeat: usize,
}

impl ExperimentSpec {
    pub fn base_seed(&self) -> u64 {
        self.run.seed
    }

    /// Replaces the base seed, e.g. from `GLIDER_SEED`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.run.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeat == 0 {
            return Err(Error::Config("repeat must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("no variant selected".into()));
        }
        let names = self.domain_names();
        if names.len() < 2 {
            return Err(Error::Config(format!(
                "leave-one-domain-out needs at least 2 domains, got {}",
                names.len()
            )));
        }
        if let Some(tests) = &self.test_domains {
            if tests.is_empty() {
                return Err(Error::Config("test_domains is empty".into()));
            }
            if let Some(t) = tests.iter().find(|t| !names.contains(t)) {
                return Err(Error::Config(format!("test domain {t:?} is not in the dataset")));
            }
        }
        if let Dataset::Synthetic { config, .. } = &self.dataset {
            config.validate()?;
        }
        for v in &self.variants {
            RunConfig {
                variant: *v,
                ..self.run.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn domain_names(&self) -> Vec<String> {
        match &self.dataset {
            Dataset::Synthetic { config, .. } => (0..config.num_domains).map(|e| format!("synth{e}")).collect(),
            Dataset::Files { domains, .. } => domains.clone(),
        }
    }

    /// The held-out domains in rotation order.
    pub fn rotation(&self) -> Vec<String> {
        self.test_domains.clone().unwrap_or_else(|| self.domain_names())
    }
}

struct Entries {
    path: PathBuf,
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn take_raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take_raw(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| Error::Parse {
                path: self.path.clone(),
                line,
                msg: format!("{key} = {v:?}: {e}"),
            }),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list(&mut self, key: &str) -> Option<Vec<String>> {
        self.take_raw(key).map(|(v, _)| {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, got {s:?}")),
    }
}

#[derive(Clone, Copy)]
struct Flag(bool);

impl FromStr for Flag {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_bool(s).map(Flag)
    }
}

/// Parses config text. `path` is only used in error messages and to resolve
/// a relative `files.dir`.
pub fn parse_config_str(text: &str, path: &Path) -> Result<ExperimentSpec> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("expected key = value, found {line:?}"),
        })?;
        let key = key.trim().to_string();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown config key {key:?} (line {})", i + 1)));
        }
        if map.insert(key.clone(), (value.trim().to_string(), i + 1)).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("duplicate key {key:?}"),
            });
        }
    }
    let mut e = Entries {
        path: path.to_path_buf(),
        map,
    };

    let kind: String = e
        .take("dataset")?
        .ok_or_else(|| Error::Config("missing dataset (synthetic or files)".into()))?;
    let dataset = match kind.as_str() {
        "synthetic" => {
            let mut c = SynthShiftConfig::default();
            e.set("synth.num_domains", &mut c.num_domains)?;
            e.set("synth.nodes_per_domain", &mut c.nodes_per_domain)?;
            e.set("synth.num_classes", &mut c.num_classes)?;
            e.set("synth.feature_dim", &mut c.feature_dim)?;
            e.set("synth.intra_block_p", &mut c.intra_block_p)?;
            e.set("synth.inter_block_p", &mut c.inter_block_p)?;
            e.set("synth.attr_shift_scale", &mut c.attr_shift_scale)?;
            e.set("synth.topo_shift_scale", &mut c.topo_shift_scale)?;
            e.set("synth.class_sep", &mut c.class_sep)?;
            let seed: Option<u64> = e.take("synth.seed")?;
            c.seed = seed.unwrap_or(0);
            Dataset::Synthetic {
                config: c,
                explicit_seed: seed.is_some(),
            }
        }
        "files" => {
            let dir: String = e
                .take("files.dir")?
                .ok_or_else(|| Error::Config("dataset = files needs files.dir".into()))?;
            let mut dir = PathBuf::from(dir);
            if dir.is_relative() {
                if let Some(parent) = path.parent() {
                    dir = parent.join(dir);
                }
            }
            let domains = e
                .list("files.domains")
                .ok_or_else(|| Error::Config("dataset = files needs files.domains".into()))?;
            Dataset::Files {
                dir,
                domains,
                num_classes: e.take("files.num_classes")?,
            }
        }
        other => return Err(Error::Config(format!("dataset must be synthetic or files, got {other:?}"))),
    };

    let mut run = RunConfig::default();
    e.set("seed", &mut run.seed)?;
    e.set("alpha", &mut run.alpha)?;
    e.set("learning_rate", &mut run.learning_rate)?;
    if let Some(s) = e.take::<String>("optimizer")? {
        run.optimizer = OptimizerKind::parse(&s)?;
    }
    e.set("epochs", &mut run.epochs)?;
    if let Some(Flag(b)) = e.take("include_original")? {
        run.include_original = b;
    }
    e.set("train_fraction", &mut run.train_fraction)?;
    if let Some(Flag(b)) = e.take("select_best")? {
        run.select_best = b;
    }
    e.set("augment.num_generators", &mut run.augment.num_generators)?;
    e.set("augment.iterations", &mut run.augment.iterations)?;
    e.set("augment.edits_per_node", &mut run.augment.edits_per_node)?;
    e.set("augment.learning_rate", &mut run.augment.learning_rate)?;
    if let Some(Flag(b)) = e.take("augment.reward_baseline")? {
        run.augment.reward_baseline = b;
    }
    e.set("stage1.lambda_x", &mut run.stage1.lambda_x)?;
    e.set("stage1.lambda_c", &mut run.stage1.lambda_c)?;
    e.set("stage1.lambda_s", &mut run.stage1.lambda_s)?;
    e.set("stage1.learning_rate", &mut run.stage1.learning_rate)?;
    e.set("stage1.max_epochs", &mut run.stage1.max_epochs)?;
    e.set("stage1.tolerance", &mut run.stage1.tolerance)?;
    e.set("stage1.hidden_width", &mut run.stage1.hidden_width)?;
    e.set("stage1.semantic_dim", &mut run.stage1.semantic_dim)?;
    e.set("stage1.variation_dim", &mut run.stage1.variation_dim)?;
    e.set("backbone.hidden_width", &mut run.backbone.hidden_width)?;
    e.set("backbone.num_layers", &mut run.backbone.num_layers)?;
    if let Some(s) = e.take::<String>("backbone.activation")? {
        run.backbone.activation = Activation::parse(&s)?;
    }
    e.set("backbone.dropout", &mut run.backbone.dropout)?;
    e.set("backbone.weight_decay", &mut run.backbone.weight_decay)?;

    let variants = match e.list("variant") {
        Some(v) => v.iter().map(|s| s.parse()).collect::<Result<Vec<Variant>>>()?,
        None => vec![Variant::Glider],
    };
    run.variant = variants[0];
    let mut repeat = 1usize;
    e.set("repeat", &mut repeat)?;
    let output_dir = PathBuf::from(e.take::<String>("output_dir")?.unwrap_or_else(|| "glider-out".into()));
    let test_domains = e.list("test_domains").filter(|v| !(v.len() == 1 && v[0] == "all"));

    if let Some((key, (_, line))) = e.map.iter().next() {
        return Err(Error::Config(format!(
            "config key {key:?} (line {line}) does not apply to dataset = {kind}"
        )));
    }
    let spec = ExperimentSpec {
        dataset,
        test_domains,
        run,
        variants,
        output_dir,
        repeat,
    };
    spec.validate()?;
    Ok(spec)
}

/// Reads a config file. `GLIDER_SEED`, when set, replaces the base seed.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let spec = parse_config_str(&text, path)?;
    match std::env::var("GLIDER_SEED") {
        Ok(s) => {
            let seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("GLIDER_SEED = {s:?} is not an unsigned integer")))?;
            Ok(spec.with_seed(seed))
        }
        Err(_) => Ok(spec),
    }
}

/// Loads or generates every domain for repeat `r`.
pub fn load_dataset(spec: &ExperimentSpec, r: usize) -> Result<Vec<DomainGraph>> {
    match &spec.dataset {
        Dataset::Synthetic { config, explicit_seed } => {
            let base = if *explicit_seed { config.seed } else { spec.base_seed() };
            synth_multi_domain(&SynthShiftConfig {
                seed: base.wrapping_add(r as u64),
                ..config.clone()
            })
        }
        Dataset::Files {
            dir,
            domains,
            num_classes,
        } => {
            let mut graphs = domains
                .iter()
                .map(|name| {
                    let edges = dir.join(format!("{name}.edges"));
                    let nodes = dir.join(format!("{name}.nodes"));
                    for p in [&edges, &nodes] {
                        if !p.exists() {
                            return Err(Error::Config(format!("dataset missing: {} not found", p.display())));
                        }
                    }
                    load_domain(edges, nodes, *num_classes, name.clone())
                })
                .collect::<Result<Vec<_>>>()?;
            let c = graphs.iter().map(|g| g.num_classes).max().unwrap_or(0);
            for g in &mut graphs {
                g.num_classes = c;
            }
            Ok(graphs)
        }
    }
}

/// One line of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub variant: Variant,
    pub train_domains: Vec<String>,
    pub test_domain: String,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub metrics: MetricsRow,
    pub wall_clock_seconds: f64,
}

const METRICS_HEADER: [&str; 7] = ["run_id", "variant", "train_domains", "test_domain", "seed", "accuracy", "macro_f1"];

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.variant.to_string(),
            r.train_domains.join("+"),
            r.test_domain.clone(),
            r.seed.to_string(),
            r.accuracy.to_string(),
            r.macro_f1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("unexpected header {header:?}"),
        });
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let bad = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg,
            };
            let num = |k: usize| rec[k].parse::<f64>().map_err(|e| bad(format!("{}: {e}", METRICS_HEADER[k])));
            Ok(MetricsRow {
                run_id: rec[0].to_string(),
                variant: rec[1].parse()?,
                train_domains: rec[2].split('+').map(str::to_string).collect(),
                test_domain: rec[3].to_string(),
                seed: rec[4].parse().map_err(|e| bad(format!("seed: {e}")))?,
                accuracy: num(5)?,
                macro_f1: num(6)?,
            })
        })
        .collect()
}

pub fn write_objective_csv(path: impl AsRef<Path>, history: &[ObjectiveRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "variance_term", "mean_term", "objective"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.variance_term.to_string(),
            r.mean_term.to_string(),
            r.objective.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_objective_csv(path: impl AsRef<Path>) -> Result<Vec<ObjectiveRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let bad = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg,
            };
            if rec.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", rec.len())));
            }
            let f = |k: usize| rec[k].parse::<f64>().map_err(|e| bad(e.to_string()));
            Ok(ObjectiveRecord {
                epoch: rec[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                variance_term: f(1)?,
                mean_term: f(2)?,
                objective: f(3)?,
            })
        })
        .collect()
}

/// Stage-1 results keyed by run seed, domain and whether the GLIDER-C weights apply.
type Stage1Cache = HashMap<(u64, String, bool), Stage1Outcome>;

fn stage1_for_run(cache: &mut Stage1Cache, train: &[DomainGraph], cfg: &RunConfig) -> Result<Option<Vec<Stage1Outcome>>> {
    if cfg.variant == Variant::Erm {
        return Ok(None);
    }
    let reduced = cfg.variant == Variant::GliderC;
    train
        .iter()
        .map(|g| {
            let key = (cfg.seed, g.domain_id.clone(), reduced);
            if let Some(hit) = cache.get(&key) {
                return Ok(hit.clone());
            }
            let out = fit_stage1(g, cfg)?;
            cache.insert(key, out.clone());
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Runs every (variant, seed, held-out domain) combination and writes the
/// result files. On failure a `STATUS` file describing the error is left next
/// to the rows completed so far.
pub fn cmd_train(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    let out = &spec.output_dir;
    fs::create_dir_all(out)?;
    let status = out.join("STATUS");
    if status.exists() {
        fs::remove_file(&status)?;
    }
    let mut rows = Vec::new();
    let result = run_protocol(spec, &mut rows);
    if let Err(e) = &result {
        fs::write(&status, format!("failed after {} completed runs: {e}\n", rows.len()))?;
    }
    result.map(|_| rows)
}

/// As [`cmd_train`] with the variant list replaced.
pub fn cmd_ablate(spec: &ExperimentSpec, variants: &[Variant]) -> Result<Vec<ResultRow>> {
    let spec = ExperimentSpec {
        variants: variants.to_vec(),
        ..spec.clone()
    };
    spec.validate()?;
    cmd_train(&spec)
}

fn run_protocol(spec: &ExperimentSpec, rows: &mut Vec<ResultRow>) -> Result<()> {
    spec.validate()?;
    let out = &spec.output_dir;
    let metrics_path = out.join("metrics.csv");
    let timing_path = out.join("timing.csv");
    let flush = |rows: &[ResultRow]| -> Result<()> {
        let m: Vec<MetricsRow> = rows.iter().map(|r| r.metrics.clone()).collect();
        write_metrics_csv(&metrics_path, &m)?;
        let mut w = csv::Writer::from_path(&timing_path)?;
        w.write_record(["run_id", "wall_clock_seconds"])?;
        for r in rows {
            w.write_record([r.metrics.run_id.clone(), format!("{:.3}", r.wall_clock_seconds)])?;
        }
        w.flush()?;
        Ok(())
    };
    flush(rows)?;

    let mut files_cache: Option<Vec<DomainGraph>> = None;
    for r in 0..spec.repeat {
        let graphs = match (&spec.dataset, &files_cache) {
            (Dataset::Files { .. }, Some(g)) => g.clone(),
            _ => {
                let g = load_dataset(spec, r)?;
                if matches!(spec.dataset, Dataset::Files { .. }) {
                    files_cache = Some(g.clone());
                }
                g
            }
        };
        let seed = spec.base_seed().wrapping_add(r as u64);
        let mut cache = Stage1Cache::new();
        for &variant in &spec.variants {
            let cfg = RunConfig {
                variant,
                seed,
                ..spec.run.clone()
            };
            for test_name in spec.rotation() {
                let started = Instant::now();
                let test = graphs
                    .iter()
                    .find(|g| g.domain_id == test_name)
                    .ok_or_else(|| Error::Config(format!("test domain {test_name:?} is not in the dataset")))?;
                let train: Vec<DomainGraph> = graphs.iter().filter(|g| g.domain_id != test_name).cloned().collect();
                let run_id = format!("{variant}_{test_name}_seed{seed}");
                let run_dir = out.join("runs").join(&run_id);
                fs::create_dir_all(&run_dir)?;

                let stage1 = stage1_for_run(&mut cache, &train, &cfg)?;
                let mut state = train_with_stage1(&train, &cfg, stage1)?;
                quantize_f32(&mut state.backbone);
                let metrics = evaluate_backbone(&state.backbone, test)?;

                write_objective_csv(run_dir.join("objective.csv"), &state.history)?;
                for (g, h) in train.iter().zip(&state.stage1_histories) {
                    write_loss_history(run_dir.join(format!("stage1_{}.csv", g.domain_id)), h)?;
                }
                state.save(run_dir.join("checkpoint"))?;

                rows.push(ResultRow {
                    metrics: MetricsRow {
                        run_id,
                        variant,
                        train_domains: train.iter().map(|g| g.domain_id.clone()).collect(),
                        test_domain: test_name.clone(),
                        seed,
                        accuracy: metrics.accuracy,
                        macro_f1: metrics.macro_f1,
                    },
                    wall_clock_seconds: started.elapsed().as_secs_f64(),
                });
                flush(rows)?;
            }
        }
    }
    Ok(())
}

/// Evaluates a saved checkpoint on one graph and writes `eval_<domain>.csv`
/// into `output` (default: the checkpoint directory).
pub fn cmd_eval(checkpoint: &Path, edges: &Path, nodes: &Path, output: Option<&Path>) -> Result<Metrics> {
    let backbone = load_backbone(checkpoint)?;
    let domain = nodes
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "test".into());
    let graph = load_domain(edges, nodes, Some(backbone.num_classes()), domain.clone())?;
    let metrics = evaluate_backbone(&backbone, &graph)?;
    let dir = output.unwrap_or(checkpoint);
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("eval_{domain}.csv")))?;
    w.write_record(["checkpoint", "test_domain", "accuracy", "macro_f1"])?;
    w.write_record([
        checkpoint.display().to_string(),
        domain,
        metrics.accuracy.to_string(),
        metrics.macro_f1.to_string(),
    ])?;
    w.flush()?;
    Ok(metrics)
}

/// Node-level predictions as `node_id, predicted, true`.
pub fn write_predictions(path: impl AsRef<Path>, model: &BackboneClassifier, graph: &DomainGraph) -> Result<()> {
    let logits = model.node_logits(graph)?;
    let pred = model.classify(&logits)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node_id", "predicted", "true"])?;
    for (i, (p, t)) in pred.predicted_labels.iter().zip(&graph.labels).enumerate() {
        w.write_record([i.to_string(), p.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes each synthetic domain as `<name>.edges` / `<name>.nodes` plus
/// `manifest.csv`. Returns the written paths.
pub fn cmd_synth(spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
    if !matches!(spec.dataset, Dataset::Synthetic { .. }) {
        return Err(Error::Config("synth needs dataset = synthetic".into()));
    }
    let graphs = load_dataset(spec, 0)?;
    let out = &spec.output_dir;
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut w = csv::Writer::from_path(out.join("manifest.csv"))?;
    w.write_record(["domain", "edges", "nodes", "num_nodes", "num_edges", "num_classes", "feature_dim"])?;
    for g in &graphs {
        let edges = format!("{}.edges", g.domain_id);
        let nodes = format!("{}.nodes", g.domain_id);
        write_edge_list(out.join(&edges), &g.adjacency)?;
        write_node_table(out.join(&nodes), &g.features, &g.labels)?;
        w.write_record([
            g.domain_id.clone(),
            edges.clone(),
            nodes.clone(),
            g.num_nodes().to_string(),
            g.num_edges().to_string(),
            g.num_classes.to_string(),
            g.feature_dim().to_string(),
        ])?;
        written.push(out.join(edges));
        written.push(out.join(nodes));
    }
    w.flush()?;
    written.push(out.join("manifest.csv"));
    Ok(written)
}

/// Mean accuracy and macro-F1 per variant, in first-seen order.
pub fn summarize(rows: &[MetricsRow]) -> Vec<(Variant, f64, f64, usize)> {
    let mut order: Vec<Variant> = Vec::new();
    for r in rows {
        if !order.contains(&r.variant) {
            order.push(r.variant);
        }
    }
    order
        .into_iter()
        .map(|v| {
            let sel: Vec<&MetricsRow> = rows.iter().filter(|r| r.variant == v).collect();
            let n = sel.len() as f64;
            (
                v,
                sel.iter().map(|r| r.accuracy).sum::<f64>() / n,
                sel.iter().map(|r| r.macro_f1).sum::<f64>() / n,
                sel.len(),
            )
        })
        .collect()
}
