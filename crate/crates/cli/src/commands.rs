use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tcrl::data::{gen_synthetic, load_folder, write_dataset, Dataset, Manifest, MANIFEST_VERSION};
use tcrl::pipeline::{
    evaluate, write_epoch, write_header, Checkpoint, EvalReport, TrainConfig, Trainer, DEFAULT_MAX_RANK,
};

use crate::config::{resolve_output, standard_rows, RunConfig};
use crate::ConfigError;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const CMC_FILE: &str = "cmc.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub struct GenData {
    pub ids: usize,
    pub per_id: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn gen_data(args: &GenData) -> Result<()> {
    if args.ids < 2 || args.per_id < 2 {
        return Err(
            ConfigError(format!("need --ids >= 2 and --per-id >= 2, got {} and {}", args.ids, args.per_id)).into()
        );
    }
    let data = gen_synthetic(args.ids, args.per_id, args.height, args.width, args.seed)
        .map_err(|e| ConfigError(e.to_string()))?;
    let root = resolve_output(&args.out);
    let mut splits = BTreeMap::new();
    for ds in [&data.train, &data.query, &data.gallery] {
        let name = ds.split.name();
        splits.insert(name.to_string(), write_dataset(ds, &root.join(name))?);
    }
    let (height, width, channels) = data.train.image_shape();
    let manifest =
        Manifest { version: MANIFEST_VERSION, height, width, channels, num_identities: 2 * args.ids, splits };
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    log::info!("wrote {} training images and manifest {}", data.train.len(), path.display());
    Ok(())
}

fn load_split(root: &Path, split: &str) -> Result<Dataset> {
    let dir = root.join(split);
    if !dir.is_dir() {
        return Err(ConfigError(format!("dataset split {} does not exist", dir.display())).into());
    }
    load_folder(&dir).with_context(|| format!("loading {}", dir.display()))
}

/// Every reason the run cannot start, or nothing.
fn preflight(cfg: &TrainConfig, train: &Dataset) -> Result<()> {
    let mut problems = cfg.problems();
    let e = &cfg.encoder;
    if train.image_shape() != (e.height, e.width, e.channels) {
        problems.push(format!(
            "images are {:?} (h, w, c) but encoder is configured for {:?}",
            train.image_shape(),
            (e.height, e.width, e.channels)
        ));
    }
    let batch = cfg.batch_identities * cfg.images_per_identity;
    if batch > train.len() {
        problems.push(format!("batch of {batch} exceeds the {} training samples", train.len()));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(ConfigError(problems.join("\n")).into())
    }
}

/// Trains to completion, writing telemetry and the final checkpoint to `out`.
fn train_into(cfg: &TrainConfig, train: Dataset, out: &Path) -> Result<Trainer> {
    preflight(cfg, &train)?;
    fs::create_dir_all(out)?;
    let mut telemetry = BufWriter::new(File::create(out.join(TELEMETRY_FILE))?);
    write_header(&mut telemetry, cfg)?;
    let mut trainer = Trainer::new(cfg.clone(), train)?;
    trainer.run(|s| {
        log::info!(
            "epoch {}: {} clusters, {} outliers, mean loss {:.4}",
            s.epoch,
            s.clusters,
            s.outliers,
            s.mean_loss()
        );
        write_epoch(&mut telemetry, s)
    })?;
    telemetry.flush()?;
    trainer.checkpoint().save(&out.join(CHECKPOINT_FILE))?;
    Ok(trainer)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir();
    let train = load_split(&cfg.data.dir, "train")?;
    fs::create_dir_all(&out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml()?)?;
    train_into(&cfg.train, train, &out)?;
    log::info!("wrote {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    report.write_json(BufWriter::new(File::create(out.join(REPORT_FILE))?))?;
    report.write_cmc_csv(BufWriter::new(File::create(out.join(CMC_FILE))?))?;
    Ok(())
}

pub fn eval(checkpoint: &Path, data: &Path, out: &Path, max_rank: usize) -> Result<EvalReport> {
    if !checkpoint.is_file() {
        return Err(ConfigError(format!("checkpoint {} does not exist", checkpoint.display())).into());
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    let encoder = ckpt.encoder()?;
    let query = load_split(data, "query")?;
    let gallery = load_split(data, "gallery")?;
    let report = evaluate(&encoder, &query, &gallery, max_rank)?;
    write_report(&report, out)?;
    Ok(report)
}

fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir();
    let rows = if cfg.ablate.rows.is_empty() { standard_rows() } else { cfg.ablate.rows.clone() };
    if cfg.ablate.seeds.is_empty() {
        return Err(ConfigError("ablate.seeds is empty".into()).into());
    }
    // resolve every row before the first run so typos fail fast
    let losses = rows.iter().map(|r| cfg.row_loss(r)).collect::<Result<Vec<_>>>()?;
    let train = load_split(&cfg.data.dir, "train")?;
    let query = load_split(&cfg.data.dir, "query")?;
    let gallery = load_split(&cfg.data.dir, "gallery")?;
    if let Some(r) = rows.iter().find(|r| r.name.contains([',', '\n', '"'])) {
        return Err(ConfigError(format!("ablation row name {:?} cannot go in a CSV field", r.name)).into());
    }
    for loss in &losses {
        for &seed in &cfg.ablate.seeds {
            preflight(&TrainConfig { loss: loss.clone(), seed, ..cfg.train.clone() }, &train)?;
        }
    }
    fs::create_dir_all(&out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml()?)?;

    let mut csv = String::from("row,seed,map,rank1\n");
    for (row, loss) in rows.iter().zip(losses) {
        let (mut maps, mut rank1s) = (Vec::new(), Vec::new());
        for &seed in &cfg.ablate.seeds {
            let run_cfg = TrainConfig { loss: loss.clone(), seed, ..cfg.train.clone() };
            let dir = out.join(slug(&row.name)).join(format!("seed_{seed}"));
            log::info!("ablation row {:?}, seed {seed}", row.name);
            let trainer = train_into(&run_cfg, train.clone(), &dir)?;
            let report = evaluate(trainer.encoder(), &query, &gallery, DEFAULT_MAX_RANK)?;
            write_report(&report, &dir)?;
            csv.push_str(&format!("{},{seed},{},{}\n", row.name, report.map, report.rank(1)));
            maps.push(report.map);
            rank1s.push(report.rank(1));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        csv.push_str(&format!("{},mean,{},{}\n", row.name, mean(&maps), mean(&rank1s)));
    }
    fs::write(out.join(ABLATION_FILE), csv)?;
    log::info!("wrote {}", out.join(ABLATION_FILE).display());
    Ok(())
}
