//! Run options merged from an optional JSON config file and the command
//! line. Flags always win; the config only fills gaps.

use std::path::{Path, PathBuf};

use adda::engine::{DelayModel, Mode, RunConfig, SelectionPolicy};
use adda::error::{Error, Result};
use serde::Deserialize;

use crate::RunArgs;

/// File-backed half of the options. Every field is optional so a config
/// can hold just the parts that do not vary across a replication loop.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<String>,
    pub data: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub k: Option<usize>,
    pub r: Option<f64>,
    pub epsilon: Option<f64>,
    pub iters: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub delay: Option<DelayModel>,
    pub out: Option<PathBuf>,
    pub record: Option<Vec<String>>,
    pub fix_gamma: Option<bool>,
}

impl ExperimentConfig {
    pub fn from_json_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        serde_json::from_reader(file)
            .map_err(|e| Error::InvalidConfig(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved options for one `run` invocation.
#[derive(Debug)]
pub struct ResolvedRun {
    pub model: String,
    pub data: PathBuf,
    pub prior: Option<PathBuf>,
    pub policy: SelectionPolicy,
    pub run: RunConfig,
    pub out: PathBuf,
    pub record: Vec<String>,
    pub fix_gamma: bool,
}

fn missing(what: &str) -> Error {
    Error::InvalidConfig(format!("{what} is required (flag or config file)"))
}

fn parse_mode(text: &str) -> Result<Mode> {
    match text {
        "virtual" => Ok(Mode::Virtual),
        "live" => Ok(Mode::Live),
        other => Err(Error::InvalidConfig(format!(
            "mode must be \"virtual\" or \"live\", got {other:?}"
        ))),
    }
}

pub fn resolve(args: RunArgs) -> Result<ResolvedRun> {
    let file = match &args.config {
        Some(path) => ExperimentConfig::from_json_path(path)?,
        None => ExperimentConfig::default(),
    };
    let mode = match args.mode.as_deref() {
        Some(text) => parse_mode(text)?,
        None => file.mode.unwrap_or(Mode::Virtual),
    };
    let mut record = args.record;
    if record.is_empty() {
        record = file.record.unwrap_or_default();
    }
    let policy = SelectionPolicy {
        k: args.k.or(file.k).ok_or_else(|| missing("k"))?,
        r: args.r.or(file.r).unwrap_or(1.0),
        epsilon: args.epsilon.or(file.epsilon).unwrap_or(0.0),
        mode,
        delay: file.delay.unwrap_or_default(),
    };
    let run = RunConfig {
        iters: args.iters.or(file.iters).ok_or_else(|| missing("iters"))?,
        seed: args.seed.or(file.seed).unwrap_or(0),
        record_drift: record.iter().any(|spec| spec == "drift"),
    };
    Ok(ResolvedRun {
        model: args.model.or(file.model).ok_or_else(|| missing("model"))?,
        data: args.data.or(file.data).ok_or_else(|| missing("data"))?,
        prior: args.prior.or(file.prior),
        policy,
        run,
        out: args.out.or(file.out).unwrap_or_else(|| PathBuf::from(".")),
        record,
        fix_gamma: args.fix_gamma || file.fix_gamma.unwrap_or(false),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare_args() -> RunArgs {
        RunArgs {
            config: None,
            model: Some("lasso".into()),
            data: Some(PathBuf::from("d.csv")),
            prior: None,
            k: Some(4),
            r: None,
            epsilon: None,
            iters: Some(100),
            seed: None,
            mode: None,
            out: None,
            record: vec![],
            fix_gamma: false,
        }
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let resolved = resolve(bare_args()).unwrap();
        assert_eq!(resolved.policy.r, 1.0);
        assert_eq!(resolved.policy.epsilon, 0.0);
        assert_eq!(resolved.policy.mode, Mode::Virtual);
        assert_eq!(resolved.run.seed, 0);
        assert!(!resolved.run.record_drift);
        assert_eq!(resolved.out, PathBuf::from("."));
    }

    #[test]
    fn missing_required_field_is_invalid_config() {
        let mut args = bare_args();
        args.iters = None;
        let err = resolve(args).err().unwrap();
        assert!(err.is_validation());
    }

    #[test]
    fn bad_mode_is_rejected() {
        let mut args = bare_args();
        args.mode = Some("parallel".into());
        assert!(resolve(args).is_err());
    }

    #[test]
    fn drift_record_toggles_run_config() {
        let mut args = bare_args();
        args.record = vec!["drift".into()];
        assert!(resolve(args).unwrap().run.record_drift);
    }
}
