use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use epl_cli::experiment::{aggregate, summary_csv};
use epl_cli::files::{read_embedding, read_split};
use epl_cli::manifest::{file_digest, read_file_digests};
use epl_cli::report::read_results;
use epl_cli::scatter::{class_color, render_scatter, UNLABELED_FILL};
use epl_core::dataset::{generate_blobs, stratified_split, BlobSpec, Label, LabelVector, Role, SplitFractions};
use epl_core::metrics::score;
use epl_core::probe::{train_softmax, SoftmaxConfig};
use epl_core::Matrix;

const SMALL: &str = "[experiment]\nname = small\n[dataset]\nclasses = 3\nper_class = 60\ncenter_dist = 6\n\
[split]\nsupervised = 0.05\nunsupervised = 0.65\ntest = 0.3\n\
[contrastive]\nepochs = 5\n[projection]\niterations = 250\n";

fn epl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.ini");
    fs::write(&p, text).unwrap();
    p
}

fn run_experiment(dir: &Path, config: &str, extra: &[&str]) -> (Option<i32>, PathBuf) {
    let cfg = write_config(dir, config);
    let out = dir.join("out");
    let mut args = vec![
        "experiment",
        "all",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    (epl(&args).status.code(), out)
}

#[test]
fn scatter_parses_back() {
    let coords = Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]]).unwrap();
    let labels = LabelVector::from_entries(vec![Label::True(0), Label::True(1), Label::Unlabeled]);
    let svg = render_scatter(&coords, &labels).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let fills: Vec<&str> = doc
        .descendants()
        .filter(|n| n.has_tag_name("circle"))
        .map(|n| n.attribute("fill").unwrap())
        .collect();
    assert_eq!(fills.len(), 3);
    assert_eq!(fills[0], UNLABELED_FILL);
    let distinct: BTreeSet<&str> = fills.iter().copied().collect();
    assert_eq!(distinct.len(), 3);
    assert!(distinct.contains(class_color(0).as_str()));
    assert!(distinct.contains(class_color(1).as_str()));
    for c in doc.descendants().filter(|n| n.has_tag_name("circle")) {
        for a in ["cx", "cy"] {
            let v: f64 = c.attribute(a).unwrap().parse().unwrap();
            assert!((0.0..=600.0).contains(&v));
        }
    }
}

#[test]
fn full_experiment_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_experiment(dir.path(), SMALL, &[]);
    assert_eq!(code, Some(0));
    let rows = read_results(&out.join("results.csv")).unwrap();
    let count = |prefix: &str| rows.iter().filter(|r| r.experiment.starts_with(prefix)).count();
    // 3 replicas: C1 has 2 modes x 2 classifiers, C2 3 modes, C3 baseline + 3 modes.
    assert_eq!(count("C1"), 12);
    assert_eq!(count("C2"), 9);
    assert_eq!(count("C3"), 12);

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    // results.csv holds 6 decimals, so the recomputation agrees to rounding.
    let recomputed = summary_csv(&rows);
    assert_eq!(summary.lines().count(), recomputed.lines().count());
    for (a, b) in summary.lines().zip(recomputed.lines()).skip(1) {
        let (fa, fb): (Vec<&str>, Vec<&str>) = (a.split(',').collect(), b.split(',').collect());
        assert_eq!(fa[..5], fb[..5]);
        for (x, y) in fa[5..].iter().zip(&fb[5..]) {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() <= 2e-6, "{a} vs {b}");
        }
    }
    for s in aggregate(&rows) {
        assert_eq!(s.replicas, 3);
        let k: Vec<f64> = rows
            .iter()
            .filter(|r| r.experiment == s.experiment && r.mode == s.mode && r.classifier == s.classifier)
            .map(|r| r.kappa)
            .collect();
        assert!((s.kappa.0 - k.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert_eq!(k.len(), 3);
    }

    // Embeddings cover exactly S and U of the replica's split.
    let (idx, coords) = read_embedding(&out.join("embedding_simclr_0.csv")).unwrap();
    assert_eq!(coords.rows(), idx.len());
    let embedded: BTreeSet<usize> = idx.iter().copied().collect();
    // 60 per class: 3 in S, 18 in T, the rest in U.
    assert_eq!(embedded.len(), 3 * (60 - 18));
    let text = fs::read_to_string(out.join("embedding_simclr_0.csv")).unwrap();
    let supervised = text.lines().skip(1).filter(|l| l.split(',').nth(3) == Some("S")).count();
    assert_eq!(supervised, 9);

    // Every file but the manifest itself is listed with its digest.
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    let listed = read_file_digests(&manifest);
    let on_disk: BTreeSet<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.txt")
        .collect();
    assert_eq!(listed.iter().map(|(_, n)| n.clone()).collect::<BTreeSet<_>>(), on_disk);
    for (digest, name) in &listed {
        assert_eq!(&file_digest(&out.join(name)).unwrap(), digest);
    }
    for section in ["[config]", "[seeds]", "[timings]", "[failures]", "[notes]"] {
        assert!(manifest.contains(section));
    }

    // The SVG draws every embedded point.
    let svg = fs::read_to_string(out.join("scatter_supcon_1.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), idx.len());

    // One dataset gives only 3 (dataset, mode) cells, too few for a rank correlation.
    let report = epl(&["report", "--dir", out.to_str().unwrap()]);
    assert_eq!(report.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&report.stderr).contains("at least 5"));
}

#[test]
fn mode_flag_limits_arms() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_experiment(dir.path(), SMALL, &["--mode", "simclr", "--replicas", "1"]);
    assert_eq!(code, Some(0));
    let rows = read_results(&out.join("results.csv")).unwrap();
    let modes: BTreeSet<&str> = rows.iter().map(|r| r.mode.as_str()).collect();
    assert_eq!(modes, BTreeSet::from(["baseline", "simclr"]));
    assert!(!out.join("encoder_supcon_0.ckpt").exists());
}

#[test]
fn failing_arm_leaves_others_intact() {
    // One supervised sample per class: SupCon and the fine-tune arm cannot train.
    let dir = tempfile::tempdir().unwrap();
    let config = SMALL.replace("supervised = 0.05\nunsupervised = 0.65", "supervised = 0.01\nunsupervised = 0.69");
    let (code, out) = run_experiment(dir.path(), &config, &["--replicas", "1"]);
    assert_eq!(code, Some(2));
    let rows = read_results(&out.join("results.csv")).unwrap();
    let modes: BTreeSet<&str> = rows.iter().map(|r| r.mode.as_str()).collect();
    assert_eq!(modes, BTreeSet::from(["baseline", "simclr"]));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    let failures: Vec<&str> = manifest
        .lines()
        .skip_while(|l| *l != "[failures]")
        .skip(1)
        .take_while(|l| !l.is_empty())
        .collect();
    assert!(failures.iter().any(|f| f.contains("supcon")));
    assert!(failures.iter().any(|f| f.contains("combined")));

    // The surviving arm's rows are the same as in a run without the failing arms.
    let alone = tempfile::tempdir().unwrap();
    let (code, out_alone) = run_experiment(alone.path(), &config, &["--replicas", "1", "--mode", "simclr"]);
    assert_eq!(code, Some(0));
    assert_eq!(
        fs::read(out.join("results.csv")).unwrap(),
        fs::read(out_alone.join("results.csv")).unwrap()
    );
}

#[test]
fn true_labels_on_u_do_not_hurt_the_classifier() {
    let spec = BlobSpec { classes: 4, per_class: 200, dims: 16, spread: 1.0, center_dist: 2.0, seed: 5 };
    let ds = generate_blobs(&spec).unwrap();
    let truth = ds.labels().unwrap();
    for seed in 0..3 {
        let split = stratified_split(&ds, SplitFractions::DEFAULT, seed).unwrap();
        let t = split.indices(Role::Test);
        let xt = ds.features().select_rows(&t);
        let lt = LabelVector::from_true(&t.iter().map(|&i| truth[i]).collect::<Vec<_>>());
        let all: Vec<usize> = (0..t.len()).collect();
        let accuracy = |rows: Vec<usize>| {
            let x = ds.features().select_rows(&rows);
            let y = LabelVector::from_true(&rows.iter().map(|&i| truth[i]).collect::<Vec<_>>());
            let cfg = SoftmaxConfig { seed, ..SoftmaxConfig::default() };
            let model = train_softmax(&x, &y, 4, &cfg).unwrap();
            let pred = LabelVector::from_true(&model.predict(&xt).unwrap());
            score(&pred, &lt, &all, 4).unwrap().accuracy
        };
        let baseline = accuracy(split.indices(Role::Supervised));
        let oracle = accuracy(split.indices_of(&[Role::Supervised, Role::Unsupervised]));
        assert!(oracle >= baseline, "seed {seed}: {oracle} < {baseline}");
    }
}

#[test]
fn degenerate_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    // Two samples per class cannot seed every class and fill U and T.
    let (code, _) = run_experiment(dir.path(), &SMALL.replace("per_class = 60", "per_class = 2"), &[]);
    assert_eq!(code, Some(1));
    let (code, _) = run_experiment(dir.path(), &format!("{SMALL}bogus = 1\n"), &[]);
    assert_eq!(code, Some(1));
    let (code, _) = run_experiment(dir.path(), SMALL, &["--mode", "nonsense"]);
    assert_eq!(code, Some(1));
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let ok = |args: &[&str]| {
        let o = epl(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    ok(&["gen", "--out", &p("data.csv"), "--classes", "3", "--per-class", "40", "--dims", "4", "--center-dist", "8"]);
    ok(&["split", "--data", &p("data.csv"), "--out", &p("split.csv"), "--seed", "3", "--supervised", "0.1"]);
    let split = read_split(Path::new(&p("split.csv"))).unwrap();
    assert_eq!(split.len(), 120);
    ok(&[
        "train", "--data", &p("data.csv"), "--split", &p("split.csv"), "--mode", "simclr", "--epochs", "3",
        "--out", &p("enc.ckpt"),
    ]);
    assert!(Path::new(&p("enc.ckpt.manifest.txt")).exists());
    ok(&["extract", "--data", &p("data.csv"), "--encoder", &p("enc.ckpt"), "--out", &p("latent.csv")]);
    ok(&[
        "project", "--data", &p("latent.csv"), "--split", &p("split.csv"), "--out", &p("emb.csv"),
        "--iterations", "250", "--svg", &p("emb.svg"),
    ]);
    let (idx, _) = read_embedding(Path::new(&p("emb.csv"))).unwrap();
    assert_eq!(idx.len(), split.count(Role::Supervised) + split.count(Role::Unsupervised));
    let text = ok(&[
        "propagate", "--embedding", &p("emb.csv"), "--data", &p("data.csv"), "--split", &p("split.csv"),
        "--out", &p("pseudo.csv"),
    ]);
    assert!(text.contains("propagation accuracy"));
    for kind in ["linear", "opfsup", "softmax"] {
        let text = ok(&["probe", "--data", &p("data.csv"), "--split", &p("split.csv"), "--kind", kind]);
        assert!(text.contains("test accuracy"));
    }
    ok(&[
        "probe", "--data", &p("data.csv"), "--split", &p("split.csv"), "--kind", "softmax", "--pseudo",
        &p("pseudo.csv"),
    ]);
    // Warm start from the auxiliary pretraining corpus.
    ok(&["train", "--auxiliary", "4", "--epochs", "2", "--out", &p("aux.ckpt")]);
    ok(&[
        "train", "--data", &p("data.csv"), "--split", &p("split.csv"), "--mode", "supcon", "--epochs", "2",
        "--warm-start", &p("aux.ckpt"), "--out", &p("warm.ckpt"),
    ]);
}
