//! The command-line workflow as library calls: prepare, embed, train,
//! evaluate and ablate. Each command writes its artifacts into a directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::dataio::{
    build_dataset, compute_strata, load_attributes, load_interactions, render_prompt, InputFormat, InteractionDataset,
    PromptRecord, PromptTemplate,
};
use crate::embeddings::{load_semantic_matrix, pseudo_semantic_matrix, SemanticMatrix};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_detailed, export_projection, EvalReport};
use crate::intent::IntentPrototypes;
use crate::training::{fit_with, EpochRecord};

pub const DATASET_FILE: &str = "dataset.json";
pub const PROMPTS_FILE: &str = "prompts.jsonl";
pub const STRATA_FILE: &str = "strata.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const PROTOTYPES_FILE: &str = "prototypes.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const PROJECTION_FILE: &str = "projection.csv";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub struct PrepareArgs<'a> {
    pub raw: &'a Path,
    pub kind: &'a str,
    pub out: &'a Path,
    pub format: Option<InputFormat>,
    pub attributes: Option<&'a Path>,
    pub min_count: usize,
    pub tail_fraction: f64,
    pub cold_threshold: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub raw_rows: usize,
    pub users: usize,
    pub items: usize,
    pub train_actions: usize,
    pub actions: usize,
    pub tail_items: usize,
    pub cold_users: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub min_count: usize,
    pub tail_fraction: f64,
    pub cold_threshold: usize,
    pub counts: ManifestCounts,
    /// File name → SHA-256 of its bytes.
    pub checksums: BTreeMap<String, String>,
}

/// Load → filter → split → strata → prompts, then a manifest of counts and
/// checksums.
pub fn cmd_prepare(args: &PrepareArgs) -> Result<Manifest> {
    let template: PromptTemplate = args.kind.parse()?;
    let format = match args.format {
        Some(f) => f,
        None => InputFormat::from_path(args.raw)?,
    };
    let rows = load_interactions(args.raw, format)?;
    let ds = build_dataset(&rows, args.min_count)?;
    let strata = compute_strata(&ds, args.tail_fraction, args.cold_threshold)?;
    let attrs = match args.attributes {
        Some(p) => load_attributes(p)?,
        None => Default::default(),
    };
    // Items with no attribute record get their raw id as the name so prompts
    // stay distinct.
    let name_slot = template.slots()[0];
    let mut prompts = String::new();
    for (i, id) in ds.items.iter().enumerate() {
        let rec = match attrs.get(id) {
            Some(a) => render_prompt(i, a, template),
            None => render_prompt(i, &BTreeMap::from([(name_slot.to_string(), id.clone())]), template),
        };
        prompts.push_str(&serde_json::to_string(&rec)?);
        prompts.push('\n');
    }

    mkdir(args.out)?;
    write(&args.out.join(DATASET_FILE), ds.to_json()?)?;
    write(&args.out.join(PROMPTS_FILE), prompts)?;
    write(&args.out.join(STRATA_FILE), serde_json::to_string(&strata)?)?;
    let mut checksums = BTreeMap::new();
    for f in [DATASET_FILE, PROMPTS_FILE, STRATA_FILE] {
        checksums.insert(f.to_string(), sha256_file(&args.out.join(f))?);
    }
    let manifest = Manifest {
        kind: template.name().to_string(),
        min_count: args.min_count,
        tail_fraction: args.tail_fraction,
        cold_threshold: args.cold_threshold,
        counts: ManifestCounts {
            raw_rows: rows.len(),
            users: ds.n_users(),
            items: ds.n_items(),
            train_actions: ds.users.iter().map(|u| u.train.len()).sum(),
            actions: ds.n_actions(),
            tail_items: strata.n_tail(),
            cold_users: strata.n_cold(),
        },
        checksums,
    };
    write(&args.out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    info!("prepared {} users, {} items into {}", ds.n_users(), ds.n_items(), args.out.display());
    Ok(manifest)
}

pub fn load_prompts(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut recs: Vec<PromptRecord> = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: PromptRecord =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
        if r.item_index != recs.len() {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("expected item_index {}, found {}", recs.len(), r.item_index),
            });
        }
        recs.push(r);
    }
    Ok(recs.into_iter().map(|r| r.prompt).collect())
}

/// Pseudo-embeds every prompt. A path ending in `.csv` gets the CSV format,
/// anything else the binary directory format.
pub fn cmd_embed_pseudo(prompts: &Path, dim: usize, seed: u64, out: &Path) -> Result<SemanticMatrix> {
    if dim == 0 {
        return Err(Error::Config("--dim must be positive".into()));
    }
    let m = pseudo_semantic_matrix(&load_prompts(prompts)?, dim, seed)?;
    if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        if let Some(p) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            mkdir(p)?;
        }
        m.save_csv(out)?;
    } else {
        m.save_binary(out)?;
    }
    Ok(m)
}

pub fn load_dataset(dir: &Path) -> Result<InteractionDataset> {
    InteractionDataset::load(&dir.join(DATASET_FILE))
}

/// `data.semantic` when set, else pseudo-embeddings of the prepared prompts.
pub fn load_semantic(config: &ExperimentConfig, ds: &InteractionDataset) -> Result<SemanticMatrix> {
    match &config.data.semantic {
        Some(p) => load_semantic_matrix(p, ds.n_items()),
        None => {
            let prompts = load_prompts(&config.data.dir.join(PROMPTS_FILE))?;
            if prompts.len() != ds.n_items() {
                return Err(Error::Shape(format!("{} prompts for {} items", prompts.len(), ds.n_items())));
            }
            pseudo_semantic_matrix(&prompts, config.embedding.pseudo_dim, config.embedding.pseudo_seed)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PrototypeDump {
    k: usize,
    dim: usize,
    fit_step: usize,
    centroids: Vec<Vec<f64>>,
}

pub fn write_prototypes(p: &IntentPrototypes, path: &Path) -> Result<()> {
    let c = &p.centroids;
    let dump = PrototypeDump {
        k: c.rows(),
        dim: c.cols(),
        fit_step: p.fit_step,
        centroids: (0..c.rows()).map(|r| c.row(r).to_vec()).collect(),
    };
    write(path, serde_json::to_string_pretty(&dump)?)
}

#[derive(Debug)]
pub struct TrainRun {
    pub dir: PathBuf,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Trains on an already-resolved config, writing snapshot, streamed epoch
/// log, checkpoint and prototypes into `dir`.
pub fn train_in(config: &ExperimentConfig, dir: &Path) -> Result<TrainRun> {
    mkdir(dir)?;
    config.write_snapshot(dir)?;
    let ds = load_dataset(&config.data.dir)?;
    let semantic = load_semantic(config, &ds)?;
    let log_path = dir.join(LOG_FILE);
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let outcome = fit_with(&ds, &semantic, config, |rec| {
        let line = serde_json::to_string(rec)?;
        writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))
    })?;
    outcome.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    if let Some(p) = &outcome.checkpoint.prototypes {
        write_prototypes(p, &dir.join(PROTOTYPES_FILE))?;
    }
    Ok(TrainRun { dir: dir.to_path_buf(), checkpoint: outcome.checkpoint, log: outcome.log })
}

pub fn cmd_train(config_path: &Path, overrides: &[String], out: Option<&Path>) -> Result<TrainRun> {
    let config = ExperimentConfig::load(config_path, overrides)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| config.output_root().join("train"));
    train_in(&config, &dir)
}

/// Evaluates a checkpoint on the test split and writes the reports (and a
/// 2-D projection of the test encodings when prototypes exist).
pub fn evaluate_in(checkpoint: &Checkpoint, data: &Path, out: &Path) -> Result<EvalReport> {
    let ds = load_dataset(data)?;
    let cfg = &checkpoint.config;
    let strata = compute_strata(&ds, cfg.data.tail_fraction, cfg.data.cold_threshold)?;
    let ev = evaluate_detailed(checkpoint, &ds, &strata)?;
    mkdir(out)?;
    cfg.write_snapshot(out)?;
    write(&out.join(REPORT_JSON), ev.report.to_json()?)?;
    write(&out.join(REPORT_TXT), ev.report.to_table())?;
    if let Some(labels) = &ev.labels {
        match export_projection(&ev.encodings, labels) {
            Ok(p) => p.write_csv(&out.join(PROJECTION_FILE))?,
            Err(e) => warn!("projection skipped: {e}"),
        }
    }
    Ok(ev.report)
}

pub fn cmd_evaluate(checkpoint: &Path, data: Option<&Path>, out: &Path) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = data.map(Path::to_path_buf).unwrap_or_else(|| ck.config.data.dir.clone());
    evaluate_in(&ck, &data, out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub overrides: Vec<String>,
}

impl Variant {
    fn new(name: &str, overrides: &[&str]) -> Self {
        Self { name: name.into(), overrides: overrides.iter().map(|s| s.to_string()).collect() }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Grid {
    variant: Vec<Variant>,
}

/// The standard ablation grid, relative to a gated-fusion base config.
pub fn default_variants() -> Vec<Variant> {
    vec![
        Variant::new("w/ CA", &["fusion.strategy=cross_attention"]),
        Variant::new("w/ CA w/o align", &["fusion.strategy=cross_attention", "loss.lambda_align=0"]),
        Variant::new("w/o align", &["loss.lambda_align=0"]),
        Variant::new("w/ concat", &["fusion.strategy=concat"]),
        Variant::new("w/ weighted", &["fusion.strategy=weighted"]),
        Variant::new("full", &[]),
    ]
}

/// Reads `[[variant]]` tables with `name` and `overrides`.
pub fn load_grid(path: &Path) -> Result<Vec<Variant>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = toml::Deserializer::new(&text);
    let grid: Grid = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Config(format!("{}: {}: {}", path.display(), e.path(), e.inner().message().trim())))?;
    if grid.variant.is_empty() {
        return Err(Error::Config(format!("{}: grid has no variants", path.display())));
    }
    Ok(grid.variant)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
    let mut s = format!("{:<w$}  {:>8}  {:>8}\n", "variant", "HR@10", "NDCG@10");
    for r in rows {
        match &r.report {
            Some(rep) => s += &format!("{:<w$}  {:>8}  {:>8}\n", r.name, fmt4(rep.overall.hr10), fmt4(rep.overall.ndcg10)),
            None => s += &format!("{:<w$}  {:>8}  {:>8}  {}\n", r.name, "failed", "-", r.error.as_deref().unwrap_or("")),
        }
    }
    s
}

fn fmt4(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn slug(name: &str) -> String {
    let s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
    s.trim_matches('_').to_string()
}

fn run_variant(base: &ExperimentConfig, v: &Variant, dir: &Path) -> Result<EvalReport> {
    let cfg = base.with_overrides(&v.overrides)?;
    let run = train_in(&cfg, dir)?;
    evaluate_in(&run.checkpoint, &cfg.data.dir, dir)
}

/// Trains and evaluates every variant from the same base config (and hence
/// the same seeds). A failing variant is recorded and the rest still run.
pub fn ablate(base: &ExperimentConfig, variants: &[Variant], out: &Path, parallel: bool) -> Result<Vec<AblationRow>> {
    mkdir(out)?;
    base.write_snapshot(out)?;
    let dirs: Vec<PathBuf> = variants.iter().enumerate().map(|(i, v)| out.join(format!("{i:02}_{}", slug(&v.name)))).collect();
    let results: Vec<Result<EvalReport>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = variants
                .iter()
                .zip(&dirs)
                .map(|(v, d)| s.spawn(move || run_variant(base, v, d)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::State("variant thread panicked".into()))))
                .collect()
        })
    } else {
        variants.iter().zip(&dirs).map(|(v, d)| run_variant(base, v, d)).collect()
    };
    let rows: Vec<AblationRow> = variants
        .iter()
        .zip(results)
        .map(|(v, r)| match r {
            Ok(rep) => AblationRow { name: v.name.clone(), report: Some(rep), error: None },
            Err(e) => {
                warn!("variant `{}` failed: {e}", v.name);
                AblationRow { name: v.name.clone(), report: None, error: Some(e.to_string()) }
            }
        })
        .collect();
    write(&out.join("ablation.json"), serde_json::to_string_pretty(&rows)?)?;
    write(&out.join("ablation.txt"), ablation_table(&rows))?;
    Ok(rows)
}

pub fn cmd_ablate(config_path: &Path, overrides: &[String], grid: Option<&Path>, out: Option<&Path>, parallel: bool) -> Result<Vec<AblationRow>> {
    let base = ExperimentConfig::load(config_path, overrides)?;
    let variants = match grid {
        Some(g) => load_grid(g)?,
        None => default_variants(),
    };
    // reject bad overrides before spending time on training
    for v in &variants {
        base.with_overrides(&v.overrides)
            .map_err(|e| Error::Config(format!("variant `{}`: {e}", v.name)))?;
    }
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| base.output_root().join("ablate"));
    ablate(&base, &variants, &dir, parallel)
}
