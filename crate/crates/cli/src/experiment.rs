//! The three experiment designs.
//!
//! * C1: linear probe and OPFSup trained on latent `F_S`, tested on `F_T`.
//! * C2: t-SNE of latent `F_{S∪U}`, OPFSemi propagation from S, scored on U.
//! * C3: softmax network on raw inputs, S only (baseline) or S∪U with
//!   pseudo-labels from each contrastive arm, tested on T.
//!
//! Replica `r` uses seed `base + r` for its split and every stage below it.
//! A failing arm is recorded and skipped; other arms are unaffected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use epl_core::checkpoint::write_manifest;
use epl_core::contrastive::{extract_features, finetune_supcon, train, EncoderParams, Mode, TrainConfig};
use epl_core::dataset::{
    generate_blobs, load_features, merge_labels, stratified_split, Dataset, Label, LabelVector,
    Role, SplitAssignment,
};
use epl_core::metrics::{knn_consistency, score, ScoreReport};
use epl_core::opf::{opfsemi_propagate, opfsup_train};
use epl_core::probe::{train_linear, train_softmax, LinearConfig, SoftmaxConfig};
use epl_core::projection::{tsne_project, ProjectionConfig};
use epl_core::rng::derive_seed;
use epl_core::Matrix;

use crate::config::{ArmMode, DatasetSource, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::files::write_embedding;
use crate::manifest::RunManifest;
use crate::scatter::emit_scatter;

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    /// `C1a`, `C1b`, `C2a`..`C2c`, `C3a`..`C3d`.
    pub experiment: String,
    pub mode: String,
    pub classifier: String,
    pub seed: u64,
    pub accuracy: f64,
    pub kappa: f64,
}

impl ResultRow {
    pub const HEADER: &'static str = "dataset,experiment,mode,classifier,seed,accuracy,kappa";

    fn new(dataset: &str, experiment: &str, mode: &str, classifier: &str, seed: u64, s: &ScoreReport) -> Self {
        ResultRow {
            dataset: dataset.to_string(),
            experiment: experiment.to_string(),
            mode: mode.to_string(),
            classifier: classifier.to_string(),
            seed,
            accuracy: s.accuracy,
            kappa: s.kappa,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6}",
            self.dataset, self.experiment, self.mode, self.classifier, self.seed, self.accuracy, self.kappa
        )
    }
}

/// Visual-separation measurements of one C2 arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyRow {
    pub dataset: String,
    pub mode: String,
    pub seed: u64,
    /// k-NN label consistency of the 2-D embedding (true labels on S∪U).
    pub embedding_knn: f64,
    /// Same measure in the latent space.
    pub latent_knn: f64,
    pub propagation_accuracy: f64,
    pub propagation_kappa: f64,
}

impl ConsistencyRow {
    pub const HEADER: &'static str =
        "dataset,mode,seed,embedding_knn,latent_knn,propagation_accuracy,propagation_kappa";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.dataset,
            self.mode,
            self.seed,
            self.embedding_knn,
            self.latent_knn,
            self.propagation_accuracy,
            self.propagation_kappa
        )
    }
}

fn c1_code(mode: ArmMode) -> Option<&'static str> {
    match mode {
        ArmMode::SimClr => Some("C1a"),
        ArmMode::SupCon => Some("C1b"),
        ArmMode::Combined => None,
    }
}

fn c2_code(mode: ArmMode) -> &'static str {
    match mode {
        ArmMode::SimClr => "C2a",
        ArmMode::SupCon => "C2b",
        ArmMode::Combined => "C2c",
    }
}

fn c3_code(mode: ArmMode) -> &'static str {
    match mode {
        ArmMode::SimClr => "C3b",
        ArmMode::SupCon => "C3c",
        ArmMode::Combined => "C3d",
    }
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let ds = match &config.source {
        DatasetSource::Blobs(spec) => generate_blobs(spec)?,
        DatasetSource::File { path, format } => load_features(path, *format)?,
    };
    ds.require_labels()?;
    Ok(ds)
}

struct C2Cell {
    row: ResultRow,
    consistency: ConsistencyRow,
    /// True on S, pseudo on U, unlabeled on T.
    merged: LabelVector,
}

type Arm<T> = std::result::Result<T, String>;

/// One experiment run over all replicas; stages are computed lazily and
/// shared between C1, C2 and C3.
pub struct Session {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    out: PathBuf,
    splits: Vec<Arm<SplitAssignment>>,
    encoders: BTreeMap<(usize, ArmMode), Arm<EncoderParams>>,
    c2: BTreeMap<(usize, ArmMode), Arm<C2Cell>>,
    pub rows: Vec<ResultRow>,
    pub consistency: Vec<ConsistencyRow>,
    pub failures: Vec<String>,
    pub manifest: RunManifest,
}

impl Session {
    /// Loads the dataset and checks that the split is feasible; problems
    /// here are configuration errors.
    pub fn new(config: ExperimentConfig, command: &str) -> Result<Self> {
        config.validate()?;
        let dataset = load_dataset(&config)?;
        let out = config.out.clone();
        fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        let mut manifest = RunManifest::new(command);
        manifest.config = config.echo();
        manifest.notes.push(
            "replica r uses seed base + r for both its split and its training stages".into(),
        );
        manifest.notes.push(
            "SupCon batches are stratified so every class present has at least 2 samples".into(),
        );
        let mut splits = Vec::with_capacity(config.replicas);
        for r in 0..config.replicas {
            let seed = replica_seed(&config, r);
            manifest.seeds.push((format!("replica.{r}"), seed));
            let split = stratified_split(&dataset, config.fractions, derive_seed(seed, "split"))
                .map_err(|e| CliError::config(format!("split is infeasible: {e}")))?;
            splits.push(Ok(split));
        }
        Ok(Session {
            config,
            dataset,
            out,
            splits,
            encoders: BTreeMap::new(),
            c2: BTreeMap::new(),
            rows: Vec::new(),
            consistency: Vec::new(),
            failures: Vec::new(),
            manifest,
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn seed(&self, replica: usize) -> u64 {
        replica_seed(&self.config, replica)
    }

    fn fail(&mut self, what: String) {
        self.failures.push(what);
    }

    fn split(&self, r: usize) -> Arm<SplitAssignment> {
        self.splits[r].clone()
    }

    fn truth(&self) -> &[usize] {
        self.dataset.labels().expect("checked at load")
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.config.train.clone()
        }
    }

    fn encoder(&mut self, r: usize, mode: ArmMode) -> Arm<EncoderParams> {
        if let Some(e) = self.encoders.get(&(r, mode)) {
            return e.clone();
        }
        let result = self.train_encoder(r, mode);
        self.encoders.insert((r, mode), result.clone());
        if let Err(e) = &result {
            self.fail(format!("replica {r} {}: training failed: {e}", mode.name()));
        }
        result
    }

    fn train_encoder(&mut self, r: usize, mode: ArmMode) -> Arm<EncoderParams> {
        let split = self.split(r)?;
        let seed = self.seed(r);
        let x = self.dataset.features().clone();
        let truth = self.truth().to_vec();
        let s_rows = split.indices(Role::Supervised);
        let stage = format!("replica{r}.{}.train", mode.name());
        let (params, cfg) = match mode {
            ArmMode::SimClr => {
                let su = split.indices_of(&[Role::Supervised, Role::Unsupervised]);
                let cfg = self.train_config(derive_seed(seed, "simclr"));
                let out = self
                    .manifest
                    .time(&stage, || train(Mode::SimClr, &x, &su, None, &cfg));
                (out.map_err(|e| e.to_string())?.params, cfg)
            }
            ArmMode::SupCon => {
                let cfg = self.train_config(derive_seed(seed, "supcon"));
                let out = self
                    .manifest
                    .time(&stage, || train(Mode::SupCon, &x, &s_rows, Some(&truth), &cfg));
                (out.map_err(|e| e.to_string())?.params, cfg)
            }
            ArmMode::Combined => {
                let base = self
                    .encoder(r, ArmMode::SimClr)
                    .map_err(|_| "SimCLR stage failed".to_string())?;
                let cfg = self.train_config(derive_seed(seed, "finetune"));
                let out = self
                    .manifest
                    .time(&stage, || finetune_supcon(&base, &x, &s_rows, &truth, &cfg));
                (out.map_err(|e| e.to_string())?.params, cfg)
            }
        };
        let path = self.out.join(format!("encoder_{}_{seed}.ckpt", mode.name()));
        params.save(&path).map_err(|e| e.to_string())?;
        let mut meta = cfg.describe();
        meta.insert(0, ("mode".into(), mode.name().into()));
        write_manifest(&path, &meta).map_err(|e| e.to_string())?;
        Ok(params)
    }

    /// C1 over every replica and the SimCLR / SupCon arms.
    pub fn run_c1(&mut self) {
        let modes: Vec<ArmMode> = self
            .config
            .modes
            .iter()
            .copied()
            .filter(|m| c1_code(*m).is_some())
            .collect();
        for r in 0..self.config.replicas {
            for &mode in &modes {
                let Ok(params) = self.encoder(r, mode) else {
                    continue;
                };
                let rows = self.c1_arm(r, mode, &params);
                for res in rows {
                    match res {
                        Ok(row) => self.rows.push(row),
                        Err(e) => self.fail(format!("replica {r} {} C1: {e}", mode.name())),
                    }
                }
            }
        }
    }

    fn c1_arm(&mut self, r: usize, mode: ArmMode, params: &EncoderParams) -> Vec<Arm<ResultRow>> {
        let code = c1_code(mode).expect("filtered");
        let seed = self.seed(r);
        let split = match self.split(r) {
            Ok(s) => s,
            Err(e) => return vec![Err(e)],
        };
        let s_rows = split.indices(Role::Supervised);
        let t_rows = split.indices(Role::Test);
        let truth = self.truth();
        let k = self.dataset.class_count();
        let name = self.config.name.clone();
        let features = (|| -> epl_core::Result<(Matrix, Matrix)> {
            Ok((
                extract_features(params, self.dataset.features(), &s_rows)?,
                extract_features(params, self.dataset.features(), &t_rows)?,
            ))
        })();
        let (fs, ft) = match features {
            Ok(f) => f,
            Err(e) => return vec![Err(e.to_string())],
        };
        let ls: Vec<usize> = s_rows.iter().map(|&i| truth[i]).collect();
        let lt = LabelVector::from_true(&t_rows.iter().map(|&i| truth[i]).collect::<Vec<_>>());
        let all_t: Vec<usize> = (0..t_rows.len()).collect();
        let linear_cfg = LinearConfig {
            seed: derive_seed(seed, "linear"),
            ..self.config.linear.clone()
        };
        let stage = format!("replica{r}.{}.c1", mode.name());
        self.manifest.time(&stage, || {
            let linear = (|| -> epl_core::Result<ResultRow> {
                let m = train_linear(&fs, &ls, k, &linear_cfg)?;
                let pred = LabelVector::from_true(&m.predict(&ft)?);
                let s = score(&pred, &lt, &all_t, k)?;
                Ok(ResultRow::new(&name, code, mode.name(), "linear", seed, &s))
            })();
            let opf = (|| -> epl_core::Result<ResultRow> {
                let m = opfsup_train(&fs, &ls)?;
                let pred = m.predict(&ft)?;
                let s = score(&pred, &lt, &all_t, k)?;
                Ok(ResultRow::new(&name, code, mode.name(), "opfsup", seed, &s))
            })();
            vec![linear.map_err(|e| e.to_string()), opf.map_err(|e| e.to_string())]
        })
    }

    fn c2_cell(&mut self, r: usize, mode: ArmMode) -> Option<&C2Cell> {
        if !self.c2.contains_key(&(r, mode)) {
            let cell = match self.encoder(r, mode) {
                Ok(params) => {
                    let cell = self.compute_c2(r, mode, &params);
                    if let Err(e) = &cell {
                        self.fail(format!("replica {r} {} C2: {e}", mode.name()));
                    }
                    cell
                }
                Err(e) => Err(e),
            };
            self.c2.insert((r, mode), cell);
        }
        self.c2.get(&(r, mode)).and_then(|c| c.as_ref().ok())
    }

    fn compute_c2(&mut self, r: usize, mode: ArmMode, params: &EncoderParams) -> Arm<C2Cell> {
        let split = self.split(r)?;
        let seed = self.seed(r);
        let k = self.dataset.class_count();
        let truth = self.truth().to_vec();
        let su = split.indices_of(&[Role::Supervised, Role::Unsupervised]);
        let latent = extract_features(params, self.dataset.features(), &su).map_err(|e| e.to_string())?;
        let projection = ProjectionConfig {
            seed: derive_seed(seed, &format!("tsne-{}", mode.name())),
            ..self.config.projection.fitted_to(su.len())
        };
        let stage = format!("replica{r}.{}.project", mode.name());
        let embedding = self
            .manifest
            .time(&stage, || tsne_project(&latent, &projection))
            .map_err(|e| e.to_string())?;
        let mut seeds = LabelVector::unlabeled(su.len());
        let mut local_truth = Vec::with_capacity(su.len());
        let mut u_local = Vec::new();
        for (p, &i) in su.iter().enumerate() {
            local_truth.push(truth[i]);
            match split.roles[i] {
                Role::Supervised => seeds.set(p, Label::True(truth[i])),
                _ => u_local.push(p),
            }
        }
        let forest = opfsemi_propagate(&embedding.coords, &seeds).map_err(|e| e.to_string())?;
        let local_truth_v = LabelVector::from_true(&local_truth);
        let pseudo_local = LabelVector::from_true(&forest.label);
        let s = score(&pseudo_local, &local_truth_v, &u_local, k).map_err(|e| e.to_string())?;
        let kk = self.config.knn_k;
        let embedding_knn = knn_consistency(&embedding.coords, &local_truth_v, kk).map_err(|e| e.to_string())?;
        let latent_knn = knn_consistency(&latent, &local_truth_v, kk).map_err(|e| e.to_string())?;

        let n = self.dataset.len();
        let mut pseudo_full = LabelVector::unlabeled(n);
        for (p, &i) in su.iter().enumerate() {
            pseudo_full.set(i, Label::Pseudo(forest.label[p]));
        }
        let merged = merge_labels(&split, &LabelVector::from_true(&truth), &pseudo_full)
            .map_err(|e| e.to_string())?;

        let roles: Vec<Role> = su.iter().map(|&i| split.roles[i]).collect();
        let emb_path = self.out.join(format!("embedding_{}_{seed}.csv", mode.name()));
        write_embedding(&emb_path, &su, &embedding.coords, &roles, &forest.label).map_err(|e| e.to_string())?;
        let svg_path = self.out.join(format!("scatter_{}_{seed}.svg", mode.name()));
        emit_scatter(&embedding.coords, &seeds, &svg_path).map_err(|e| e.to_string())?;
        if !embedding.kl_settled {
            self.manifest.notes.push(format!(
                "replica {r} {}: t-SNE KL rose by more than 1e-3 within the last 50 iterations",
                mode.name()
            ));
        }

        let name = self.config.name.clone();
        Ok(C2Cell {
            row: ResultRow::new(&name, c2_code(mode), mode.name(), "opfsemi", seed, &s),
            consistency: ConsistencyRow {
                dataset: name,
                mode: mode.name().to_string(),
                seed,
                embedding_knn,
                latent_knn,
                propagation_accuracy: s.accuracy,
                propagation_kappa: s.kappa,
            },
            merged,
        })
    }

    pub fn run_c2(&mut self) {
        let modes = self.config.modes.clone();
        for r in 0..self.config.replicas {
            for &mode in &modes {
                if let Some(cell) = self.c2_cell(r, mode) {
                    let (row, cons) = (cell.row.clone(), cell.consistency.clone());
                    self.rows.push(row);
                    self.consistency.push(cons);
                }
            }
        }
    }

    fn softmax(&mut self, r: usize, rows: &[usize], labels: &LabelVector, stage: &str) -> Arm<ScoreReport> {
        let split = self.split(r)?;
        let seed = self.seed(r);
        let k = self.dataset.class_count();
        let t_rows = split.indices(Role::Test);
        let truth = self.truth();
        let x = self.dataset.features().select_rows(rows);
        let y = LabelVector::from_entries(rows.iter().map(|&i| labels.get(i)).collect());
        let lt = LabelVector::from_true(&t_rows.iter().map(|&i| truth[i]).collect::<Vec<_>>());
        let xt = self.dataset.features().select_rows(&t_rows);
        let cfg = SoftmaxConfig {
            seed: derive_seed(seed, "softmax"),
            ..self.config.softmax.clone()
        };
        let all_t: Vec<usize> = (0..t_rows.len()).collect();
        self.manifest
            .time(stage, || -> epl_core::Result<ScoreReport> {
                let model = train_softmax(&x, &y, k, &cfg)?;
                let pred = LabelVector::from_true(&model.predict(&xt)?);
                score(&pred, &lt, &all_t, k)
            })
            .map_err(|e| e.to_string())
    }

    /// C3: the S-only baseline, then one pseudo-labeled arm per mode.
    pub fn run_c3(&mut self) {
        let modes = self.config.modes.clone();
        let name = self.config.name.clone();
        for r in 0..self.config.replicas {
            let seed = self.seed(r);
            let Ok(split) = self.split(r) else { continue };
            let truth = LabelVector::from_true(self.truth());
            let s_rows = split.indices(Role::Supervised);
            match self.softmax(r, &s_rows, &truth, &format!("replica{r}.baseline.c3")) {
                Ok(s) => self.rows.push(ResultRow::new(&name, "C3a", "baseline", "softmax", seed, &s)),
                Err(e) => self.fail(format!("replica {r} baseline C3: {e}")),
            }
            let su = split.indices_of(&[Role::Supervised, Role::Unsupervised]);
            for &mode in &modes {
                let Some(merged) = self.c2_cell(r, mode).map(|c| c.merged.clone()) else {
                    continue;
                };
                let stage = format!("replica{r}.{}.c3", mode.name());
                match self.softmax(r, &su, &merged, &stage) {
                    Ok(s) => self
                        .rows
                        .push(ResultRow::new(&name, c3_code(mode), mode.name(), "softmax", seed, &s)),
                    Err(e) => self.fail(format!("replica {r} {} C3: {e}", mode.name())),
                }
            }
        }
    }

    pub fn run_all(&mut self) {
        self.run_c1();
        self.run_c2();
        self.run_c3();
    }

    /// Writes `results.csv`, `summary.csv`, `consistency.csv` (when C2 ran)
    /// and the manifest.
    pub fn finish(&mut self) -> Result<()> {
        let mut text = String::from(ResultRow::HEADER);
        text.push('\n');
        for row in &self.rows {
            text.push_str(&row.to_csv());
            text.push('\n');
        }
        write(&self.out.join("results.csv"), &text)?;
        write(&self.out.join("summary.csv"), &summary_csv(&self.rows))?;
        if !self.consistency.is_empty() {
            let mut text = String::from(ConsistencyRow::HEADER);
            text.push('\n');
            for row in &self.consistency {
                text.push_str(&row.to_csv());
                text.push('\n');
            }
            write(&self.out.join("consistency.csv"), &text)?;
        }
        self.manifest.failures = self.failures.clone();
        self.manifest.write(&self.out)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn replica_seed(config: &ExperimentConfig, replica: usize) -> u64 {
    config.seed.wrapping_add(replica as u64)
}

/// Mean and sample standard deviation (`n - 1`); the deviation is NaN for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub experiment: String,
    pub mode: String,
    pub classifier: String,
    pub replicas: usize,
    pub accuracy: (f64, f64),
    pub kappa: (f64, f64),
}

/// Rows grouped by (dataset, experiment, mode, classifier) in first-seen order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String, String), Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        let key = (
            row.dataset.clone(),
            row.experiment.clone(),
            row.mode.clone(),
            row.classifier.clone(),
        );
        if !groups.contains_key(&key) {
            keys.push(key.clone());
        }
        groups.entry(key).or_default().push(row);
    }
    keys.into_iter()
        .map(|key| {
            let g = &groups[&key];
            let acc: Vec<f64> = g.iter().map(|r| r.accuracy).collect();
            let kap: Vec<f64> = g.iter().map(|r| r.kappa).collect();
            SummaryRow {
                dataset: key.0,
                experiment: key.1,
                mode: key.2,
                classifier: key.3,
                replicas: g.len(),
                accuracy: mean_std(&acc),
                kappa: mean_std(&kap),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[ResultRow]) -> String {
    let mut text = String::from(
        "dataset,experiment,mode,classifier,replicas,accuracy_mean,accuracy_std,kappa_mean,kappa_std\n",
    );
    for s in aggregate(rows) {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            s.dataset,
            s.experiment,
            s.mode,
            s.classifier,
            s.replicas,
            s.accuracy.0,
            s.accuracy.1,
            s.kappa.0,
            s.kappa.1
        );
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_standard_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(mean_std(&[1.0]).1.is_nan());
    }

    #[test]
    fn seeds_follow_replica_index() {
        let c = ExperimentConfig {
            seed: u64::MAX,
            ..ExperimentConfig::default()
        };
        assert_eq!(replica_seed(&c, 0), u64::MAX);
        assert_eq!(replica_seed(&c, 1), 0);
    }
}
