//! Config resolution and input loading shared by the subcommands.

use std::path::{Path, PathBuf};

use ridde_core::data::{generate_synthetic, load_csv, ColumnSpec, SeriesChannel};
use ridde_core::model::{check_kb, Checkpoint, ModelParams};
use ridde_core::retrieval::{load_kb, sidecar_path, KnowledgeBase};
use ridde_core::training::{ExperimentConfig, TrainConfig};

use crate::manifest::{with_suffix, CliError, CliResult, Recorder};

pub const SYNTHETIC: &str = "synthetic";

/// Built-in profile, then the config file, then `profile` from the command
/// line. Per-key flag overrides are applied by the caller.
pub fn resolve_config(file: Option<&Path>, profile: Option<&str>, rec: &mut Recorder) -> CliResult<ExperimentConfig> {
    let mut table = match file {
        Some(path) => {
            rec.input(path);
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Usage(format!("{}: invalid TOML: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    if let Some(p) = profile {
        table.insert("profile".into(), toml::Value::String(p.into()));
    }
    let text = toml::to_string(&table).map_err(|e| CliError::Usage(e.to_string()))?;
    ExperimentConfig::from_toml_str(&text).map_err(|e| match (file, e) {
        (Some(path), ridde_core::Error::Config(m)) => CliError::Usage(format!("{}: {m}", path.display())),
        (_, e) => e.into(),
    })
}

/// The resolved config in the layout [`ExperimentConfig::from_toml_str`]
/// reads back.
pub fn config_toml(cfg: &ExperimentConfig) -> CliResult<String> {
    let ser = |e: toml::ser::Error| CliError::Runtime(format!("cannot serialize config: {e}"));
    let mut table = toml::Table::new();
    table.insert("profile".into(), toml::Value::String(profile_name(cfg).into()));
    table.extend(toml::Table::try_from(&cfg.train).map_err(ser)?);
    table.insert("synthetic".into(), toml::Value::Table(toml::Table::try_from(&cfg.synthetic).map_err(ser)?));
    toml::to_string(&table).map_err(ser)
}

fn profile_name(cfg: &ExperimentConfig) -> &'static str {
    match cfg.profile {
        ridde_core::training::Profile::Desk => "desk",
        ridde_core::training::Profile::Paper => "paper",
    }
}

/// Where `train --out <path>` writes its resolved config.
pub fn checkpoint_config_path(checkpoint: &Path) -> PathBuf {
    with_suffix(checkpoint, ".config.toml")
}

/// Channels from `synthetic` (generated from the config) or a CSV file.
pub fn load_channels(data: &str, columns: &[String], exp: &ExperimentConfig, rec: &mut Recorder) -> CliResult<Vec<SeriesChannel<f64>>> {
    if data == SYNTHETIC {
        if !columns.is_empty() {
            return Err(CliError::Usage("--columns only applies to CSV input".into()));
        }
        return Ok(generate_synthetic(&exp.synthetic, exp.synthetic.n_channels, exp.synthetic.length)?);
    }
    let path = Path::new(data);
    rec.input(path);
    let spec = if columns.is_empty() {
        ColumnSpec::All
    } else {
        ColumnSpec::Names(columns.to_vec())
    };
    Ok(load_csv(path, &spec)?)
}

pub fn is_csv(data: &str) -> bool {
    data != SYNTHETIC
}

/// The seasonal period: required for CSV input, taken from the config for
/// synthetic data.
pub fn resolve_period(flag: Option<usize>, data: &str, cfg: &mut TrainConfig) -> CliResult<()> {
    match (flag, is_csv(data)) {
        (Some(p), _) => {
            cfg.period = p;
            cfg.validate().map_err(CliError::from)
        }
        (None, true) => Err(CliError::Usage("--period is required for CSV input".into())),
        (None, false) => Ok(()),
    }
}

pub fn read_kb(path: &Path, rec: &mut Recorder) -> CliResult<KnowledgeBase<f64>> {
    rec.input(path);
    rec.input(&sidecar_path(path));
    load_kb(path).map_err(|e| CliError::Usage(format!("knowledge base {}: {e}", path.display())))
}

pub fn read_checkpoint(path: &Path, rec: &mut Recorder) -> CliResult<Checkpoint<f64>> {
    rec.input(path);
    Checkpoint::load(path).map_err(|e| CliError::Usage(format!("checkpoint {}: {e}", path.display())))
}

/// `--config` if given, otherwise the sidecar `train` wrote next to the
/// checkpoint.
pub fn checkpoint_config(checkpoint: &Path, config: Option<&Path>, rec: &mut Recorder) -> CliResult<ExperimentConfig> {
    let path = match config {
        Some(p) => p.to_path_buf(),
        None => {
            let p = checkpoint_config_path(checkpoint);
            if !p.exists() {
                return Err(CliError::Usage(format!(
                    "{} not found; pass --config with the settings the checkpoint was trained with",
                    p.display()
                )));
            }
            p
        }
    };
    resolve_config(Some(&path), None, rec)
}

/// Model from `checkpoint`, checked against `cfg` and, when retrieval is on,
/// against the knowledge base at `kb_path`.
pub fn model_for(
    ckpt: &Checkpoint<f64>,
    ckpt_path: &Path,
    cfg: &TrainConfig,
    kb: Option<(&KnowledgeBase<f64>, &Path)>,
) -> CliResult<ModelParams<f64>> {
    if ckpt.dims != cfg.dims() {
        return Err(CliError::Usage(format!(
            "checkpoint {} has dims {:?} but the config describes {:?}",
            ckpt_path.display(),
            ckpt.dims,
            cfg.dims()
        )));
    }
    let params = ckpt.params()?;
    if let Some((kb, kb_path)) = kb {
        let (d, ckd) = ((kb.context_len(), kb.horizon_len(), kb.dim()), (ckpt.dims.context_len, ckpt.dims.horizon_len, ckpt.dims.d_model));
        if d != ckd {
            return Err(CliError::Usage(format!(
                "dimension mismatch: knowledge base {} has (context, horizon, embedding) = {d:?}, checkpoint {} has {ckd:?}",
                kb_path.display(),
                ckpt_path.display()
            )));
        }
        check_kb(&params, kb).map_err(|e| {
            CliError::Usage(format!("knowledge base {} does not match checkpoint {}: {e}", kb_path.display(), ckpt_path.display()))
        })?;
    }
    Ok(params)
}

/// The knowledge base a retrieval ablation needs, or `None` without retrieval.
pub fn required_kb(kb: Option<&Path>, cfg: &TrainConfig, rec: &mut Recorder) -> CliResult<Option<(KnowledgeBase<f64>, PathBuf)>> {
    match (kb, cfg.ablation.uses_retrieval()) {
        (Some(p), true) => Ok(Some((read_kb(p, rec)?, p.to_path_buf()))),
        (None, true) => Err(CliError::Usage(format!("ablation {} needs --kb", cfg.ablation))),
        (_, false) => Ok(None),
    }
}
