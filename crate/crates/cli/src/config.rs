//! Experiment configuration: `key = value` lines grouped under `[section]`
//! headers, `#` starts a comment. Every key is optional; unknown keys are
//! rejected.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use epl_core::contrastive::{InitMode, TrainConfig};
use epl_core::dataset::{BlobSpec, Format, SplitFractions};
use epl_core::probe::{LinearConfig, SoftmaxConfig};
use epl_core::projection::ProjectionConfig;

use crate::error::{CliError, Result};

/// Contrastive arm of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArmMode {
    SimClr,
    SupCon,
    /// SimCLR followed by SupCon fine-tuning.
    Combined,
}

impl ArmMode {
    pub const ALL: [ArmMode; 3] = [ArmMode::SimClr, ArmMode::SupCon, ArmMode::Combined];

    pub fn name(self) -> &'static str {
        match self {
            ArmMode::SimClr => "simclr",
            ArmMode::SupCon => "supcon",
            ArmMode::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Option<ArmMode> {
        match s {
            "simclr" => Some(ArmMode::SimClr),
            "supcon" => Some(ArmMode::SupCon),
            "combined" | "simclr+supcon" => Some(ArmMode::Combined),
            _ => None,
        }
    }
}

/// Value of `--mode`: `both` selects every arm.
pub fn parse_mode_flag(s: &str) -> Result<Vec<ArmMode>> {
    match s {
        "both" => Ok(ArmMode::ALL.to_vec()),
        other => ArmMode::parse(other)
            .map(|m| vec![m])
            .ok_or_else(|| CliError::config(format!("unknown mode {other:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Blobs(BlobSpec),
    File { path: PathBuf, format: Format },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub source: DatasetSource,
    pub fractions: SplitFractions,
    pub seed: u64,
    pub replicas: usize,
    pub modes: Vec<ArmMode>,
    /// Template; seeds are replaced per replica and arm.
    pub train: TrainConfig,
    pub projection: ProjectionConfig,
    pub linear: LinearConfig,
    pub softmax: SoftmaxConfig,
    pub knn_k: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "blobs".into(),
            source: DatasetSource::Blobs(BlobSpec {
                classes: 4,
                per_class: 200,
                dims: 16,
                spread: 1.0,
                center_dist: 20.0,
                seed: 0,
            }),
            fractions: SplitFractions::DEFAULT,
            seed: 0,
            replicas: 3,
            modes: ArmMode::ALL.to_vec(),
            train: TrainConfig::default(),
            projection: ProjectionConfig::default(),
            linear: LinearConfig::default(),
            softmax: SoftmaxConfig::default(),
            knn_k: epl_core::metrics::DEFAULT_KNN_K,
            out: PathBuf::from("out"),
        }
    }
}

type Sections = BTreeMap<String, BTreeMap<String, (usize, String)>>;

fn parse_sections(text: &str) -> Result<Sections> {
    let mut out: Sections = BTreeMap::new();
    let mut section = String::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| CliError::config(format!("line {line_no}: unterminated section header")))?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {line_no}: expected key = value")))?;
        let key = key.trim().to_string();
        let entry = out.entry(section.clone()).or_default();
        if entry.insert(key.clone(), (line_no, value.trim().to_string())).is_some() {
            return Err(CliError::config(format!(
                "line {line_no}: duplicate key {section}.{key}"
            )));
        }
    }
    Ok(out)
}

struct Reader {
    sections: Sections,
}

impl Reader {
    /// Removes and parses `section.key` when present.
    fn take<T: FromStr>(&mut self, section: &str, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some((line, raw)) = self.sections.get_mut(section).and_then(|s| s.remove(key)) {
            *slot = raw.parse().map_err(|e| {
                CliError::config(format!("line {line}: {section}.{key} = {raw:?}: {e}"))
            })?;
        }
        Ok(())
    }

    fn take_string(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.sections.get_mut(section).and_then(|s| s.remove(key))
    }

    fn finish(self) -> Result<()> {
        for (section, keys) in self.sections {
            if let Some((key, (line, _))) = keys.into_iter().next() {
                return Err(CliError::config(format!(
                    "line {line}: unknown key {section}.{key}"
                )));
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Reader {
            sections: parse_sections(text)?,
        };
        let mut c = ExperimentConfig::default();
        r.take("experiment", "name", &mut c.name)?;
        r.take("experiment", "seed", &mut c.seed)?;
        r.take("experiment", "replicas", &mut c.replicas)?;
        if let Some((line, modes)) = r.take_string("experiment", "modes") {
            c.modes = modes
                .split(',')
                .map(|m| {
                    ArmMode::parse(m.trim())
                        .ok_or_else(|| CliError::config(format!("line {line}: unknown mode {m:?}")))
                })
                .collect::<Result<_>>()?;
        }
        r.take("experiment", "out", &mut c.out)?;

        let mut source = "blobs".to_string();
        r.take("dataset", "source", &mut source)?;
        let mut blobs = match &c.source {
            DatasetSource::Blobs(b) => b.clone(),
            DatasetSource::File { .. } => unreachable!("default source is blobs"),
        };
        r.take("dataset", "classes", &mut blobs.classes)?;
        r.take("dataset", "per_class", &mut blobs.per_class)?;
        r.take("dataset", "dims", &mut blobs.dims)?;
        r.take("dataset", "spread", &mut blobs.spread)?;
        r.take("dataset", "center_dist", &mut blobs.center_dist)?;
        r.take("dataset", "seed", &mut blobs.seed)?;
        let path = r.take_string("dataset", "path");
        let format = r.take_string("dataset", "format");
        c.source = match source.as_str() {
            "blobs" => DatasetSource::Blobs(blobs),
            "file" => {
                let (_, path) = path.ok_or_else(|| CliError::config("dataset.path is required for source = file"))?;
                let path = PathBuf::from(path);
                let format = match format.as_ref().map(|(_, f)| f.as_str()) {
                    None | Some("auto") => Format::from_path(&path),
                    Some("text") => Format::Text,
                    Some("binary") => Format::Binary,
                    Some(other) => return Err(CliError::config(format!("unknown dataset.format {other:?}"))),
                };
                DatasetSource::File { path, format }
            }
            other => return Err(CliError::config(format!("unknown dataset.source {other:?}"))),
        };

        r.take("split", "supervised", &mut c.fractions.supervised)?;
        r.take("split", "unsupervised", &mut c.fractions.unsupervised)?;
        r.take("split", "test", &mut c.fractions.test)?;

        let t = &mut c.train;
        let mut init = "scratch".to_string();
        r.take("contrastive", "init", &mut init)?;
        let checkpoint = r.take_string("contrastive", "checkpoint");
        t.init = match init.as_str() {
            "scratch" => InitMode::Scratch,
            "warm_start" => {
                let (_, p) = checkpoint
                    .ok_or_else(|| CliError::config("contrastive.checkpoint is required for warm_start"))?;
                InitMode::WarmStart(PathBuf::from(p))
            }
            other => return Err(CliError::config(format!("unknown contrastive.init {other:?}"))),
        };
        r.take("contrastive", "epochs", &mut t.epochs)?;
        r.take("contrastive", "batch_size", &mut t.batch_size)?;
        r.take("contrastive", "temperature", &mut t.temperature)?;
        r.take("contrastive", "learning_rate", &mut t.optimizer.learning_rate)?;
        r.take("contrastive", "weight_decay", &mut t.optimizer.weight_decay)?;
        r.take("contrastive", "min_learning_rate", &mut t.min_learning_rate)?;
        r.take("contrastive", "validation_fraction", &mut t.validation_fraction)?;
        r.take("contrastive", "noise", &mut t.augment.noise)?;
        r.take("contrastive", "dropout", &mut t.augment.dropout)?;
        r.take("contrastive", "hidden", &mut t.architecture.hidden)?;
        r.take("contrastive", "latent", &mut t.architecture.latent)?;
        r.take("contrastive", "head_hidden", &mut t.architecture.head_hidden)?;
        r.take("contrastive", "output", &mut t.architecture.output)?;

        let p = &mut c.projection;
        r.take("projection", "perplexity", &mut p.perplexity)?;
        r.take("projection", "iterations", &mut p.iterations)?;
        r.take("projection", "learning_rate", &mut p.learning_rate)?;
        r.take("projection", "early_exaggeration", &mut p.early_exaggeration)?;
        r.take("projection", "exaggeration_iterations", &mut p.exaggeration_iterations)?;
        r.take("projection", "momentum_switch", &mut p.momentum_switch)?;

        r.take("probe", "linear_lambda", &mut c.linear.lambda)?;
        r.take("probe", "linear_epochs", &mut c.linear.epochs)?;
        r.take("probe", "linear_step", &mut c.linear.step)?;
        r.take("probe", "softmax_hidden", &mut c.softmax.hidden)?;
        r.take("probe", "softmax_epochs", &mut c.softmax.epochs)?;
        r.take("probe", "softmax_learning_rate", &mut c.softmax.learning_rate)?;
        r.take("probe", "softmax_momentum", &mut c.softmax.momentum)?;
        r.take("probe", "softmax_batch_size", &mut c.softmax.batch_size)?;

        r.take("metrics", "knn_k", &mut c.knn_k)?;
        r.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        ExperimentConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas < 1 {
            return Err(CliError::config("replicas must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(CliError::config("at least one mode is required"));
        }
        if self.name.is_empty() || self.name.contains([',', '\n']) {
            return Err(CliError::config("experiment.name must be non-empty without commas"));
        }
        self.fractions
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        if let InitMode::WarmStart(p) = &self.train.init {
            if !p.is_file() {
                return Err(CliError::config(format!(
                    "warm-start checkpoint {} does not exist",
                    p.display()
                )));
            }
        }
        if self.knn_k == 0 {
            return Err(CliError::config("knn_k must be positive"));
        }
        if let DatasetSource::File { path, .. } = &self.source {
            if !path.is_file() {
                return Err(CliError::config(format!("dataset {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    /// Fully resolved settings, one `section.key = value` line each.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, val: String| v.push((k.to_string(), val));
        put("experiment.name", self.name.clone());
        put("experiment.seed", self.seed.to_string());
        put("experiment.replicas", self.replicas.to_string());
        put(
            "experiment.modes",
            self.modes.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
        );
        match &self.source {
            DatasetSource::Blobs(b) => {
                put("dataset.source", "blobs".into());
                put("dataset.classes", b.classes.to_string());
                put("dataset.per_class", b.per_class.to_string());
                put("dataset.dims", b.dims.to_string());
                put("dataset.spread", b.spread.to_string());
                put("dataset.center_dist", b.center_dist.to_string());
                put("dataset.seed", b.seed.to_string());
            }
            DatasetSource::File { path, format } => {
                put("dataset.source", "file".into());
                put("dataset.path", path.display().to_string());
                put("dataset.format", format!("{format:?}").to_lowercase());
            }
        }
        put("split.supervised", self.fractions.supervised.to_string());
        put("split.unsupervised", self.fractions.unsupervised.to_string());
        put("split.test", self.fractions.test.to_string());
        for (k, val) in self.train.describe() {
            if k != "seed" {
                put(&format!("contrastive.{k}"), val);
            }
        }
        let p = &self.projection;
        put("projection.perplexity", p.perplexity.to_string());
        put("projection.iterations", p.iterations.to_string());
        put("projection.learning_rate", p.learning_rate.to_string());
        put("projection.early_exaggeration", p.early_exaggeration.to_string());
        put("projection.exaggeration_iterations", p.exaggeration_iterations.to_string());
        put("projection.momentum_switch", p.momentum_switch.to_string());
        put("probe.linear_lambda", self.linear.lambda.to_string());
        put("probe.linear_epochs", self.linear.epochs.to_string());
        put("probe.linear_step", self.linear.step.to_string());
        put("probe.softmax_hidden", self.softmax.hidden.to_string());
        put("probe.softmax_epochs", self.softmax.epochs.to_string());
        put("probe.softmax_learning_rate", self.softmax.learning_rate.to_string());
        put("probe.softmax_momentum", self.softmax.momentum.to_string());
        put("probe.softmax_batch_size", self.softmax.batch_size.to_string());
        put("metrics.knn_k", self.knn_k.to_string());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_defaults() {
        let c = ExperimentConfig::parse(
            "# demo\n[experiment]\nseed = 7\nmodes = simclr, combined\n\n[dataset]\nclasses = 3 # inline\n[contrastive]\nepochs=5\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.modes, vec![ArmMode::SimClr, ArmMode::Combined]);
        assert_eq!(c.train.epochs, 5);
        match c.source {
            DatasetSource::Blobs(b) => assert_eq!(b.classes, 3),
            _ => panic!(),
        }
        assert_eq!(c.replicas, 3);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "[experiment]\nbogus = 1\n",
            "[experiment]\nseed = x\n",
            "[experiment\n",
            "[experiment]\nseed 3\n",
            "[experiment]\nseed = 1\nseed = 2\n",
            "[experiment]\nreplicas = 0\n",
            "[contrastive]\ninit = warm_start\n",
            "[contrastive]\ninit = warm_start\ncheckpoint = /nonexistent/x.ckpt\n",
            "[split]\nsupervised = 0.5\n",
        ] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn mode_flag() {
        assert_eq!(parse_mode_flag("both").unwrap(), ArmMode::ALL.to_vec());
        assert_eq!(parse_mode_flag("supcon").unwrap(), vec![ArmMode::SupCon]);
        assert!(parse_mode_flag("moco").is_err());
    }
}
