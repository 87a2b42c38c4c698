use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use epl_cli::config::{parse_mode_flag, ArmMode, ExperimentConfig};
use epl_cli::error::{CliError, Result};
use epl_cli::experiment::Session;
use epl_cli::files::{read_embedding, read_labels, read_split, write_embedding, write_labels, write_split};
use epl_cli::report::{correlation_report, read_consistency, read_results, render};
use epl_cli::scatter::emit_scatter;
use epl_core::contrastive::{
    extract_features, finetune_supcon, pretrain_auxiliary, train, InitMode, Mode, TrainConfig,
};
use epl_core::dataset::{
    load_features, save_features, stratified_split, BlobSpec, Dataset, Format, Label, LabelVector,
    Role, SplitFractions,
};
use epl_core::metrics::score;
use epl_core::opf::{opfsemi_propagate, opfsup_train};
use epl_core::probe::{train_linear, train_softmax};
use epl_core::projection::tsne_project;
use epl_core::rng::derive_seed;

#[derive(Parser)]
#[command(name = "epl", version, about = "Embedded pseudo-labeling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian blob dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long)]
        spread: Option<f64>,
        #[arg(long)]
        center_dist: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Stratified S/U/T split of a dataset.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = SplitFractions::DEFAULT.supervised)]
        supervised: f64,
        #[arg(long, default_value_t = SplitFractions::DEFAULT.test)]
        test: f64,
    },
    /// Train a contrastive encoder checkpoint.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, default_value = "simclr")]
        mode: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Pretrain on the synthetic auxiliary corpus with this input dimension.
        #[arg(long)]
        auxiliary: Option<usize>,
    },
    /// Latent features of every sample.
    Extract {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// t-SNE of the S and U rows (all rows without a split).
    Project {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// OPFSemi propagation from the S rows of an embedding.
    Propagate {
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        forest: Option<PathBuf>,
    },
    /// Train a classifier and score it on the T rows.
    Probe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum)]
        kind: ProbeKind,
        /// Pseudo-labels for U; the classifier then trains on S and U.
        #[arg(long)]
        pseudo: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run experiment designs end to end.
    Experiment {
        #[arg(value_enum)]
        which: Which,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        mode: Option<String>,
    },
    /// Correlation report from an experiment output directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeKind {
    Linear,
    Opfsup,
    Softmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    C1,
    C2,
    C3,
    All,
}

/// Process outcome: `Partial` maps to exit code 2.
enum Outcome {
    Done,
    Partial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("epl: {e}");
            ExitCode::from(1)
        }
    }
}

fn config_or_default(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load(path: &Path) -> Result<Dataset> {
    Ok(load_features(path, Format::from_path(path))?)
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Gen {
            out,
            config,
            classes,
            per_class,
            dims,
            spread,
            center_dist,
            seed,
        } => {
            let base = config_or_default(config.as_deref())?;
            let mut spec = match base.source {
                epl_cli::config::DatasetSource::Blobs(b) => b,
                _ => return Err(CliError::config("gen needs a blobs dataset source")),
            };
            spec = BlobSpec {
                classes: classes.unwrap_or(spec.classes),
                per_class: per_class.unwrap_or(spec.per_class),
                dims: dims.unwrap_or(spec.dims),
                spread: spread.unwrap_or(spec.spread),
                center_dist: center_dist.unwrap_or(spec.center_dist),
                seed: seed.unwrap_or(spec.seed),
            };
            let ds = epl_core::dataset::generate_blobs(&spec)?;
            save_features(&ds, &out, Format::from_path(&out))?;
            println!("wrote {} samples x {} dims to {}", ds.len(), ds.dims(), out.display());
        }
        Command::Split {
            data,
            out,
            seed,
            supervised,
            test,
        } => {
            let ds = load(&data)?;
            let fractions = SplitFractions {
                supervised,
                unsupervised: 1.0 - supervised - test,
                test,
            };
            fractions.validate().map_err(|e| CliError::config(e.to_string()))?;
            let split = stratified_split(&ds, fractions, seed)?;
            write_split(&out, &split)?;
            println!(
                "S={} U={} T={}",
                split.count(Role::Supervised),
                split.count(Role::Unsupervised),
                split.count(Role::Test)
            );
        }
        Command::Train {
            out,
            data,
            split,
            mode,
            config,
            seed,
            epochs,
            warm_start,
            auxiliary,
        } => {
            let base = config_or_default(config.as_deref())?;
            let mut cfg = TrainConfig {
                seed,
                ..base.train
            };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(p) = warm_start {
                cfg.init = InitMode::WarmStart(p);
            }
            cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
            let params = if let Some(dims) = auxiliary {
                pretrain_auxiliary(dims, &cfg)?
            } else {
                let data = data.ok_or_else(|| CliError::config("--data is required"))?;
                let split = split.ok_or_else(|| CliError::config("--split is required"))?;
                let ds = load(&data)?;
                let split = read_split(&split)?;
                if split.len() != ds.len() {
                    return Err(CliError::config("split and dataset sizes differ"));
                }
                let truth = ds.require_labels()?.to_vec();
                let s = split.indices(Role::Supervised);
                let su = split.indices_of(&[Role::Supervised, Role::Unsupervised]);
                let modes = parse_mode_flag(&mode)?;
                let [mode] = modes.as_slice() else {
                    return Err(CliError::config("train takes a single mode"));
                };
                match mode {
                    ArmMode::SimClr => train(Mode::SimClr, ds.features(), &su, None, &cfg)?.params,
                    ArmMode::SupCon => train(Mode::SupCon, ds.features(), &s, Some(&truth), &cfg)?.params,
                    ArmMode::Combined => {
                        let first = TrainConfig {
                            seed: derive_seed(seed, "simclr"),
                            ..cfg.clone()
                        };
                        let base = train(Mode::SimClr, ds.features(), &su, None, &first)?.params;
                        finetune_supcon(&base, ds.features(), &s, &truth, &cfg)?.params
                    }
                }
            };
            params.save(&out)?;
            epl_core::checkpoint::write_manifest(&out, &cfg.describe())?;
            println!("wrote encoder to {}", out.display());
        }
        Command::Extract { data, encoder, out } => {
            let ds = load(&data)?;
            let params = epl_core::contrastive::EncoderParams::load(&encoder)?;
            let rows: Vec<usize> = (0..ds.len()).collect();
            let f = extract_features(&params, ds.features(), &rows)?;
            let labels = ds.labels().map(<[usize]>::to_vec);
            let out_ds = Dataset::new(format!("{}-latent", ds.name), f, labels, ds.class_count())?;
            save_features(&out_ds, &out, Format::from_path(&out))?;
            println!("wrote {} latent rows to {}", out_ds.len(), out.display());
        }
        Command::Project {
            data,
            out,
            split,
            config,
            seed,
            perplexity,
            iterations,
            svg,
        } => {
            let ds = load(&data)?;
            let base = config_or_default(config.as_deref())?;
            let (rows, roles) = match split {
                Some(p) => {
                    let split = read_split(&p)?;
                    let su = split.indices_of(&[Role::Supervised, Role::Unsupervised]);
                    let roles = su.iter().map(|&i| split.roles[i]).collect::<Vec<_>>();
                    (su, roles)
                }
                None => ((0..ds.len()).collect(), vec![Role::Unsupervised; ds.len()]),
            };
            let mut pc = base.projection;
            pc.seed = seed;
            if let Some(p) = perplexity {
                pc.perplexity = p;
            }
            if let Some(i) = iterations {
                pc.iterations = i;
            }
            let x = ds.features().select_rows(&rows);
            let emb = tsne_project(&x, &pc.fitted_to(rows.len()))?;
            let labels: Vec<usize> = match ds.labels() {
                Some(l) => rows.iter().map(|&i| l[i]).collect(),
                None => vec![0; rows.len()],
            };
            write_embedding(&out, &rows, &emb.coords, &roles, &labels)?;
            if let Some(svg) = svg {
                let shown = LabelVector::from_entries(
                    roles
                        .iter()
                        .zip(&labels)
                        .map(|(r, &l)| if *r == Role::Supervised { Label::True(l) } else { Label::Unlabeled })
                        .collect(),
                );
                emit_scatter(&emb.coords, &shown, &svg)?;
            }
            println!("final KL {:.6}; wrote {}", emb.final_kl, out.display());
        }
        Command::Propagate {
            embedding,
            data,
            split,
            out,
            forest,
        } => {
            let ds = load(&data)?;
            let split = read_split(&split)?;
            let (indices, coords) = read_embedding(&embedding)?;
            let truth = ds.labels();
            let mut seeds = LabelVector::unlabeled(indices.len());
            let mut u_local = Vec::new();
            for (p, &i) in indices.iter().enumerate() {
                match split.roles.get(i) {
                    Some(Role::Supervised) => {
                        let t = truth.ok_or(epl_core::Error::MissingLabel(i))?;
                        seeds.set(p, Label::True(t[i]));
                    }
                    Some(_) => u_local.push(p),
                    None => return Err(CliError::config(format!("embedding index {i} outside split"))),
                }
            }
            let f = opfsemi_propagate(&coords, &seeds)?;
            let u_idx: Vec<usize> = u_local.iter().map(|&p| indices[p]).collect();
            let u_lab: Vec<usize> = u_local.iter().map(|&p| f.label[p]).collect();
            write_labels(&out, &u_idx, &u_lab)?;
            if let Some(path) = forest {
                let mut file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
                f.write_csv(&mut file).map_err(|e| CliError::io(&path, e))?;
            }
            if let Some(t) = truth {
                let local = LabelVector::from_true(&indices.iter().map(|&i| t[i]).collect::<Vec<_>>());
                let s = score(&f.label_vector(), &local, &u_local, ds.class_count())?;
                println!("propagation accuracy {:.6} kappa {:.6}", s.accuracy, s.kappa);
            }
        }
        Command::Probe {
            data,
            split,
            kind,
            pseudo,
            config,
            seed,
        } => {
            let ds = load(&data)?;
            let base = config_or_default(config.as_deref())?;
            let split = read_split(&split)?;
            let truth = ds.require_labels()?;
            let k = ds.class_count();
            let mut rows = split.indices(Role::Supervised);
            let mut labels: Vec<usize> = rows.iter().map(|&i| truth[i]).collect();
            if let Some(p) = pseudo {
                for (i, l) in read_labels(&p)? {
                    if split.roles.get(i) != Some(&Role::Unsupervised) {
                        return Err(CliError::config(format!("pseudo-label for non-U index {i}")));
                    }
                    rows.push(i);
                    labels.push(l);
                }
            }
            let t = split.indices(Role::Test);
            let x = ds.features().select_rows(&rows);
            let xt = ds.features().select_rows(&t);
            let pred = match kind {
                ProbeKind::Linear => {
                    let cfg = epl_core::probe::LinearConfig { seed, ..base.linear };
                    LabelVector::from_true(&train_linear(&x, &labels, k, &cfg)?.predict(&xt)?)
                }
                ProbeKind::Opfsup => opfsup_train(&x, &labels)?.predict(&xt)?,
                ProbeKind::Softmax => {
                    let cfg = epl_core::probe::SoftmaxConfig { seed, ..base.softmax };
                    let y = LabelVector::from_true(&labels);
                    LabelVector::from_true(&train_softmax(&x, &y, k, &cfg)?.predict(&xt)?)
                }
            };
            let lt = LabelVector::from_true(&t.iter().map(|&i| truth[i]).collect::<Vec<_>>());
            let all: Vec<usize> = (0..t.len()).collect();
            let s = score(&pred, &lt, &all, k)?;
            println!("test accuracy {:.6} kappa {:.6}", s.accuracy, s.kappa);
        }
        Command::Experiment {
            which,
            config,
            seed,
            out,
            replicas,
            mode,
        } => {
            let mut cfg = config_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(r) = replicas {
                cfg.replicas = r;
            }
            if let Some(m) = mode {
                cfg.modes = parse_mode_flag(&m)?;
            }
            let label = match which {
                Which::C1 => "c1",
                Which::C2 => "c2",
                Which::C3 => "c3",
                Which::All => "all",
            };
            let mut session = Session::new(cfg, &format!("experiment {label}"))?;
            match which {
                Which::C1 => session.run_c1(),
                Which::C2 => session.run_c2(),
                Which::C3 => session.run_c3(),
                Which::All => session.run_all(),
            }
            session.finish()?;
            for f in &session.failures {
                eprintln!("arm failed: {f}");
            }
            println!(
                "{} result rows written to {}",
                session.rows.len(),
                session.out_dir().join("results.csv").display()
            );
            if !session.failures.is_empty() {
                return Ok(Outcome::Partial);
            }
        }
        Command::Report { dir } => {
            let results = read_results(&dir.join("results.csv"))?;
            let consistency = read_consistency(&dir.join("consistency.csv"))?;
            let report = correlation_report(&consistency, &results)?;
            let text = render(&report);
            let path = dir.join("correlation.txt");
            std::fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
            print!("{text}");
        }
    }
    Ok(Outcome::Done)
}
