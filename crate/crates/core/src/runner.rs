//! Turns a [`Config`] into runs on disk.
//!
//! Layout: `<out_dir>/<run_name>/` holds `report.json`, `ledgers.jsonl`,
//! `lineage.jsonl` and `timing.json`. With several replicates each gets a
//! `rep-NN/` subdirectory and the run directory gains `aggregate.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use thiserror::Error;

use crate::config::{BackendKind, Config, TrainSource, DEFAULT_SYNTHETIC};
use crate::data::{load_dataset, select_few_shot, split_dataset, Dataset, PromptCandidate};
use crate::llm::{synthetic_dataset, Backend, CachedBackend, RemoteBackend, SimBackend};
use crate::optimizer::{optimize, RunData, RunOutput, RunReport};
use crate::report::{aggregate, Aggregate};
use crate::seed::{derive_seed, stream};
use crate::templates::MetaPromptSet;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("backend failure (partial report in {}): {message}", dir.display())]
    Backend { message: String, dir: PathBuf },
    #[error("writing output: {0}")]
    Io(String),
}

impl RunError {
    /// 2 for bad input, 3 for backend failures, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Data(_) => 2,
            RunError::Backend { .. } => 3,
            RunError::Io(_) => 1,
        }
    }
}

/// Everything a single run needs, built from the config and a seed.
pub struct Prepared {
    pub backend: Box<dyn Backend>,
    pub metas: MetaPromptSet,
    pub p0: PromptCandidate,
    pub data: RunData,
}

fn load_data(cfg: &Config, seed: u64) -> Result<Dataset, RunError> {
    match (&cfg.data.path, cfg.data.synthetic) {
        (Some(path), _) => load_dataset(path, cfg.data.format, &cfg.data.labels).map_err(|e| RunError::Data(e.to_string())),
        (None, Some(n)) => Ok(synthetic_dataset(n, seed)),
        (None, None) if cfg.backend.kind == BackendKind::Sim => Ok(synthetic_dataset(DEFAULT_SYNTHETIC, seed)),
        (None, None) => Err(RunError::Config("set data.path".into())),
    }
}

pub fn prepare(cfg: &Config, seed: u64) -> Result<Prepared, RunError> {
    let ds = load_data(cfg, seed)?;
    let split = split_dataset(&ds, seed, cfg.data.n_dev, cfg.data.n_test).map_err(|e| RunError::Data(e.to_string()))?;
    let few_shot = select_few_shot(&split.train, cfg.data.few_shot, seed).map_err(|e| RunError::Data(e.to_string()))?;
    let train = match cfg.data.train_source {
        TrainSource::Remainder => split.train,
        TrainSource::Dev => split.dev.clone(),
    };
    let data = RunData {
        train,
        dev: split.dev,
        test: split.test,
        few_shot,
    };

    let template = match &cfg.task.prompt_file {
        Some(path) => fs::read_to_string(path).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))?,
        None => cfg.task.preset.template().to_string(),
    };
    let p0 = PromptCandidate::initial(template).map_err(|e| RunError::Config(format!("initial prompt: {e}")))?;
    let metas = match &cfg.templates.dir {
        Some(dir) => MetaPromptSet::load_dir(dir).map_err(|e| RunError::Config(e.to_string()))?,
        None => MetaPromptSet::default(),
    };

    let inner: Box<dyn Backend> = match cfg.backend.kind {
        BackendKind::Sim => Box::new(
            SimBackend::new(cfg.backend.sim.clone(), seed, &ds.examples).map_err(|e| RunError::Config(e.to_string()))?,
        ),
        BackendKind::Remote => {
            Box::new(RemoteBackend::new(cfg.backend.remote.clone()).map_err(|e| RunError::Config(e.to_string()))?)
        }
    };
    let backend: Box<dyn Backend> = match &cfg.backend.cache_dir {
        Some(dir) => Box::new(CachedBackend::new(inner, dir).map_err(|e| RunError::Config(e.to_string()))?),
        None => inner,
    };
    Ok(Prepared {
        backend,
        metas,
        p0,
        data,
    })
}

fn write_json_lines<T: serde::Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut f, &row)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

fn write_pretty(path: &Path, value: &impl serde::Serialize) -> std::io::Result<()> {
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    fs::write(path, body)
}

/// Writes the artifacts of one run into `dir`.
pub fn write_run(dir: &Path, out: &RunOutput, wall_seconds: f64) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    write_pretty(&dir.join("report.json"), &out.report)?;
    write_json_lines(
        &dir.join("ledgers.jsonl"),
        out.report
            .steps
            .iter()
            .filter_map(|s| s.ledger.as_ref().map(|l| json!({"step": s.step, "ledger": l}))),
    )?;
    write_json_lines(&dir.join("lineage.jsonl"), &out.lineage)?;
    write_pretty(&dir.join("timing.json"), &json!({ "wall_seconds": wall_seconds }))
}

pub struct RunSummary {
    pub run_dir: PathBuf,
    pub reports: Vec<RunReport>,
    pub aggregate: Option<Vec<Aggregate>>,
}

/// Seed of replicate `i`; a lone run uses the master seed itself.
pub fn replicate_seed(cfg: &Config, i: usize) -> u64 {
    if cfg.replicates == 1 {
        cfg.seed
    } else {
        derive_seed(cfg.seed, stream::REPLICATE, i as u64)
    }
}

/// Runs every replicate, writing artifacts as it goes. Stops at the first
/// backend failure after writing that run's partial report.
pub fn execute(cfg: &Config) -> Result<RunSummary, RunError> {
    cfg.validate().map_err(|e| RunError::Config(e.to_string()))?;
    let run_dir = cfg.out_dir.join(cfg.run_name());
    let mut reports = Vec::with_capacity(cfg.replicates);
    for i in 0..cfg.replicates {
        let seed = replicate_seed(cfg, i);
        let effective = Config {
            seed,
            replicates: 1,
            ..cfg.clone()
        };
        let prepared = prepare(&effective, seed)?;
        let started = Instant::now();
        let mut out = optimize(
            prepared.backend.as_ref(),
            &prepared.metas,
            &prepared.p0,
            &prepared.data,
            &effective.run_config(),
        )
        .map_err(|e| RunError::Config(e.to_string()))?;
        out.report.config = serde_json::to_value(&effective).expect("config serializes");
        let dir = if cfg.replicates == 1 {
            run_dir.clone()
        } else {
            run_dir.join(format!("rep-{i:02}"))
        };
        write_run(&dir, &out, started.elapsed().as_secs_f64()).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
        if let Some(message) = out.report.failure.clone() {
            return Err(RunError::Backend { message, dir });
        }
        reports.push(out.report);
    }
    let aggregate = (cfg.replicates > 1).then(|| aggregate(&reports));
    if let Some(agg) = &aggregate {
        write_pretty(&run_dir.join("aggregate.json"), agg).map_err(|e| RunError::Io(e.to_string()))?;
    }
    Ok(RunSummary {
        run_dir,
        reports,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dir: &Path, extra: &[&str]) -> Config {
        let mut overrides = vec![
            format!("out_dir={:?}", dir.display().to_string()),
            "data.synthetic=300".into(),
            "search.depth=2".into(),
        ];
        overrides.extend(extra.iter().map(|s| s.to_string()));
        Config::from_toml("", &overrides).unwrap()
    }

    #[test]
    fn writes_the_run_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let s = execute(&cfg(tmp.path(), &["seed=3"])).unwrap();
        for f in ["report.json", "ledgers.jsonl", "lineage.jsonl", "timing.json"] {
            assert!(s.run_dir.join(f).is_file(), "{f}");
        }
        assert_eq!(s.run_dir, tmp.path().join("protegi-seed3"));
        let echoed: Config = serde_json::from_value(s.reports[0].config.clone()).unwrap();
        assert_eq!(echoed.seed, 3);
    }

    #[test]
    fn replicates_get_their_own_directories() {
        let tmp = tempfile::tempdir().unwrap();
        let s = execute(&cfg(tmp.path(), &["replicates=3", "search.depth=1"])).unwrap();
        assert_eq!(s.reports.len(), 3);
        assert!(s.run_dir.join("rep-02/report.json").is_file());
        assert!(s.run_dir.join("aggregate.json").is_file());
        let seeds: std::collections::HashSet<u64> = s.reports.iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 3);
    }

    #[test]
    fn missing_dataset_is_a_data_error() {
        let tmp = tempfile::tempdir().unwrap();
        let c = Config::from_toml(
            "",
            &[
                format!("out_dir={:?}", tmp.path().display().to_string()),
                "data.path=\"/nonexistent/file.jsonl\"".into(),
            ],
        )
        .unwrap();
        let err = execute(&c).err().unwrap();
        assert_eq!(err.exit_code(), 2);
        assert!(fs::read_dir(tmp.path()).unwrap().next().is_none());
    }
}
