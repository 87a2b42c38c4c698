//! Datasets, synthetic blobs, stratified S/U/T splits and label vectors.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::matrix::{euclidean, Matrix};
use crate::rng::{derive_seed, seeded, Rng};
use crate::{Error, Result};

/// A class label. The unlabeled state is [`Label::Unlabeled`], never a class id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Unlabeled,
    True(usize),
    Pseudo(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    True,
    Pseudo,
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Unlabeled => None,
            Label::True(c) | Label::Pseudo(c) => Some(c),
        }
    }

    pub fn provenance(self) -> Option<Provenance> {
        match self {
            Label::Unlabeled => None,
            Label::True(_) => Some(Provenance::True),
            Label::Pseudo(_) => Some(Provenance::Pseudo),
        }
    }
}

/// Per-sample labels with provenance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector {
    entries: Vec<Label>,
}

impl LabelVector {
    pub fn unlabeled(n: usize) -> Self {
        LabelVector {
            entries: vec![Label::Unlabeled; n],
        }
    }

    pub fn from_true(classes: &[usize]) -> Self {
        LabelVector {
            entries: classes.iter().map(|&c| Label::True(c)).collect(),
        }
    }

    pub fn from_entries(entries: Vec<Label>) -> Self {
        LabelVector { entries }
    }

    /// Labels only the given indices (with true provenance), everything else unlabeled.
    pub fn restricted(classes: &[usize], indices: &[usize]) -> Self {
        let mut v = LabelVector::unlabeled(classes.len());
        for &i in indices {
            v.entries[i] = Label::True(classes[i]);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Label {
        self.entries[i]
    }

    pub fn set(&mut self, i: usize, label: Label) {
        self.entries[i] = label;
    }

    pub fn class(&self, i: usize) -> Option<usize> {
        self.entries[i].class()
    }

    pub fn entries(&self) -> &[Label] {
        &self.entries
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.class(i).is_some()).collect()
    }

    /// Class ids of the given indices; fails on the first unlabeled one.
    pub fn classes_at(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices
            .iter()
            .map(|&i| self.class(i).ok_or(Error::MissingLabel(i)))
            .collect()
    }
}

/// Samples as rows, optionally with ground-truth classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Matrix,
    labels: Option<Vec<usize>>,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Option<Vec<usize>>,
        class_count: usize,
    ) -> Result<Self> {
        if features.rows() < 2 {
            return Err(Error::invalid("a dataset needs at least 2 samples"));
        }
        if features.cols() < 1 {
            return Err(Error::invalid("a dataset needs at least 1 feature"));
        }
        if let Some((row, column)) = features.first_non_finite() {
            return Err(Error::NonFinite { row, column });
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::DimensionMismatch {
                    expected: features.rows(),
                    got: l.len(),
                });
            }
            if let Some(&bad) = l.iter().find(|&&c| c >= class_count) {
                return Err(Error::invalid(format!(
                    "label {bad} outside [0, {class_count})"
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::invalid(format!("dataset '{}' has no labels", self.name)))
    }

    /// Ground truth as a true-provenance label vector.
    pub fn truth(&self) -> Result<LabelVector> {
        Ok(LabelVector::from_true(self.require_labels()?))
    }

    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let labels = self.require_labels()?;
        let mut counts = vec![0; self.class_count];
        for &c in labels {
            counts[c] += 1;
        }
        Ok(counts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// `# d=<dims> labels=<0|1> k=<classes>` header, then comma-separated rows.
    Text,
    /// `EPL1` magic, u32 n, u32 d, u8 has_labels, row-major f64, then u32 labels.
    Binary,
}

impl Format {
    /// `.bin` selects the binary format, anything else is text.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Format::Binary,
            _ => Format::Text,
        }
    }
}

const BINARY_MAGIC: &[u8; 4] = b"EPL1";

pub fn load_features(path: &Path, format: Format) -> Result<Dataset> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Text => parse_text(name, BufReader::new(file), path),
        Format::Binary => {
            let mut buf = Vec::new();
            BufReader::new(file)
                .read_to_end(&mut buf)
                .map_err(|e| Error::io(path, e))?;
            parse_binary(name, &buf)
        }
    }
}

pub fn save_features(dataset: &Dataset, path: &Path, format: Format) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        Format::Text => write_text(dataset, &mut w),
        Format::Binary => write_binary(dataset, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_text(ds: &Dataset, w: &mut impl Write) -> std::io::Result<()> {
    let has_labels = ds.labels.is_some();
    writeln!(
        w,
        "# d={} labels={} k={}",
        ds.dims(),
        u8::from(has_labels),
        ds.class_count
    )?;
    for i in 0..ds.len() {
        let mut first = true;
        for v in ds.features.row(i) {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            // `{}` on f64 prints the shortest representation that parses back exactly.
            write!(w, "{v}")?;
        }
        if let Some(l) = &ds.labels {
            write!(w, ",{}", l[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn write_binary(ds: &Dataset, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(ds.len() as u32).to_le_bytes())?;
    w.write_all(&(ds.dims() as u32).to_le_bytes())?;
    w.write_all(&[u8::from(ds.labels.is_some())])?;
    for v in ds.features.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(l) = &ds.labels {
        for &c in l {
            w.write_all(&(c as u32).to_le_bytes())?;
        }
    }
    Ok(())
}

struct Header {
    dims: usize,
    has_labels: bool,
    classes: Option<usize>,
}

fn parse_header(line: &str) -> Result<Header> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "expected header '# d=<dims> labels=<0|1> k=<classes>'".into(),
        })?;
    let mut dims = None;
    let mut has_labels = None;
    let mut classes = None;
    for tok in body.split_whitespace() {
        let (key, value) = tok.split_once('=').ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("malformed header token '{tok}'"),
        })?;
        let parsed: usize = value.parse().map_err(|_| Error::Parse {
            line: 1,
            message: format!("header value '{value}' is not an integer"),
        })?;
        match key {
            "d" => dims = Some(parsed),
            "labels" => has_labels = Some(parsed != 0),
            "k" => classes = Some(parsed),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unknown header key '{key}'"),
                })
            }
        }
    }
    Ok(Header {
        dims: dims.ok_or_else(|| Error::Parse {
            line: 1,
            message: "header lacks d=".into(),
        })?,
        has_labels: has_labels.unwrap_or(false),
        classes,
    })
}

fn parse_text(name: String, reader: impl BufRead, path: &Path) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => parse_header(line.map_err(|e| Error::io(path, e))?.trim())?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty file".into(),
            })
        }
    };
    let expected_cols = header.dims + usize::from(header.has_labels);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut row = 0;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != expected_cols {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {expected_cols} columns, found {}", cells.len()),
            });
        }
        for (column, cell) in cells[..header.dims].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("column {column}: '{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column });
            }
            data.push(v);
        }
        if header.has_labels {
            let cell = cells[header.dims];
            let c: usize = cell.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("label '{cell}' is not a class id"),
            })?;
            labels.push(c);
        }
        row += 1;
    }
    let features = Matrix::new(row, header.dims, data)?;
    let (labels, k) = if header.has_labels {
        let inferred = labels.iter().max().map_or(0, |m| m + 1);
        let k = header.classes.unwrap_or(inferred);
        (Some(labels), k.max(inferred))
    } else {
        (None, header.classes.unwrap_or(0))
    };
    Dataset::new(name, features, labels, k)
}

fn parse_binary(name: String, buf: &[u8]) -> Result<Dataset> {
    let bad = |m: &str| Error::Parse {
        line: 0,
        message: format!("binary dataset: {m}"),
    };
    if buf.len() < 13 || &buf[..4] != BINARY_MAGIC {
        return Err(bad("missing EPL1 header"));
    }
    let n = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let has_labels = buf[12] != 0;
    let need = 13 + n * d * 8 + if has_labels { n * 4 } else { 0 };
    if buf.len() != need {
        return Err(bad(&format!("expected {need} bytes, found {}", buf.len())));
    }
    let mut off = 13;
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        data.push(f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()));
        off += 8;
    }
    let labels = has_labels.then(|| {
        (0..n)
            .map(|i| {
                let o = off + 4 * i;
                u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize
            })
            .collect::<Vec<_>>()
    });
    let k = labels
        .as_ref()
        .and_then(|l| l.iter().max())
        .map_or(0, |m| m + 1);
    Dataset::new(name, Matrix::new(n, d, data)?, labels, k)
}

/// Parameters of the isotropic Gaussian blob generator.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dims: usize,
    pub spread: f64,
    pub center_dist: f64,
    pub seed: u64,
}

const CENTER_ATTEMPTS: usize = 10_000;

/// `classes` Gaussian clusters whose centers are pairwise at least
/// `center_dist` apart. Samples are ordered class by class.
pub fn generate_blobs(spec: &BlobSpec) -> Result<Dataset> {
    if spec.classes < 2 || spec.per_class < 2 || spec.dims < 1 {
        return Err(Error::invalid("blobs need k >= 2, per_class >= 2, d >= 1"));
    }
    if !(spec.spread > 0.0) || !(spec.center_dist >= 0.0) {
        return Err(Error::invalid("blobs need spread > 0 and center_dist >= 0"));
    }
    let mut rng = seeded(derive_seed(spec.seed, "blobs"));
    let half_width = spec.center_dist * (spec.classes as f64).powf(1.0 / spec.dims as f64);
    let centers = place_centers(
        spec.classes,
        spec.dims,
        spec.center_dist,
        half_width,
        CENTER_ATTEMPTS,
        &mut rng,
    )?;
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * spec.dims);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            for &mu in center {
                let z: f64 = rng.sample(StandardNormal);
                data.push(mu + spec.spread * z);
            }
            labels.push(c);
        }
    }
    let name = format!(
        "blobs-k{}-n{}-d{}-s{}-c{}-seed{}",
        spec.classes, spec.per_class, spec.dims, spec.spread, spec.center_dist, spec.seed
    );
    Dataset::new(
        name,
        Matrix::new(n, spec.dims, data)?,
        Some(labels),
        spec.classes,
    )
}

/// Rejection-samples `k` points in `[-half_width, half_width]^d` with pairwise
/// distance at least `min_dist`, giving up after `max_attempts` draws per point.
pub fn place_centers(
    k: usize,
    d: usize,
    min_dist: f64,
    half_width: f64,
    max_attempts: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    while centers.len() < k {
        let mut placed = false;
        for _ in 0..max_attempts {
            let cand: Vec<f64> = (0..d)
                .map(|_| rng.random_range(-half_width..=half_width))
                .collect();
            if centers.iter().all(|c| euclidean(c, &cand) >= min_dist) {
                centers.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(format!(
                "could not place center {} of {k} at distance >= {min_dist} after {max_attempts} attempts",
                centers.len() + 1
            )));
        }
    }
    Ok(centers)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Supervised,
    Unsupervised,
    Test,
}

impl Role {
    pub fn code(self) -> char {
        match self {
            Role::Supervised => 'S',
            Role::Unsupervised => 'U',
            Role::Test => 'T',
        }
    }

    pub fn from_code(c: char) -> Option<Role> {
        match c {
            'S' => Some(Role::Supervised),
            'U' => Some(Role::Unsupervised),
            'T' => Some(Role::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub supervised: f64,
    pub unsupervised: f64,
    pub test: f64,
}

impl SplitFractions {
    /// 1% supervised, 69% unsupervised, 30% test.
    pub const DEFAULT: SplitFractions = SplitFractions {
        supervised: 0.01,
        unsupervised: 0.69,
        test: 0.30,
    };

    pub fn validate(&self) -> Result<()> {
        let parts = [self.supervised, self.unsupervised, self.test];
        if parts.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::invalid("split fractions must be positive"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Role of every sample, plus the inputs that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitAssignment {
    pub roles: Vec<Role>,
    pub seed: u64,
    pub fractions: SplitFractions,
}

impl SplitAssignment {
    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        self.indices_of(&[role])
    }

    /// Indices whose role is in `roles`, ascending.
    pub fn indices_of(&self, roles: &[Role]) -> Vec<usize> {
        (0..self.roles.len())
            .filter(|&i| roles.contains(&self.roles[i]))
            .collect()
    }

    pub fn count(&self, role: Role) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }
}

const ROUNDING_SLACK: f64 = 1e-9;

/// Hamilton apportionment of `total` seats over `counts`; ties go to the lower class.
fn largest_remainder(total: usize, counts: &[usize], minimum_one: bool) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let quotas: Vec<f64> = counts
        .iter()
        .map(|&c| total as f64 * c as f64 / n as f64)
        .collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| (q + ROUNDING_SLACK).floor() as usize).collect();
    let mut eligible: Vec<bool> = vec![true; counts.len()];
    if minimum_one {
        for (j, s) in seats.iter_mut().enumerate() {
            if *s == 0 && counts[j] > 0 {
                *s = 1;
                eligible[j] = false;
            }
        }
    }
    let assigned: usize = seats.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).filter(|&j| eligible[j]).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let remaining = total.saturating_sub(assigned);
    if !order.is_empty() {
        for step in 0..remaining {
            seats[order[step % order.len()]] += 1;
        }
    }
    seats
}

/// Seeded stratified split into supervised, unsupervised and test parts.
///
/// The test size is `round(t_frac * n)` and the supervised size
/// `ceil(s_frac * n)`, each spread over classes by largest remainder; every
/// class receives at least one supervised sample. The rest is unsupervised.
pub fn stratified_split(
    dataset: &Dataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitAssignment> {
    fractions.validate()?;
    let labels = dataset.require_labels()?;
    let counts = dataset.class_counts()?;
    for (class, &count) in counts.iter().enumerate() {
        if count > 0 && count < 3 {
            return Err(Error::ClassTooSmall { class, count });
        }
    }
    let n = dataset.len();
    let test_total = (fractions.test * n as f64 + 0.5 + ROUNDING_SLACK).floor() as usize;
    let sup_total = (fractions.supervised * n as f64 - ROUNDING_SLACK).ceil() as usize;
    let test = largest_remainder(test_total, &counts, false);
    let sup = largest_remainder(sup_total, &counts, true);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); counts.len()];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = seeded(derive_seed(seed, "stratified-split"));
    let mut roles = vec![Role::Unsupervised; n];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if sup[class] + test[class] >= members.len() {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        for &i in &members[..sup[class]] {
            roles[i] = Role::Supervised;
        }
        for &i in &members[sup[class]..sup[class] + test[class]] {
            roles[i] = Role::Test;
        }
    }
    Ok(SplitAssignment {
        roles,
        seed,
        fractions,
    })
}

/// True labels on S, pseudo-labels on U, Test left unlabeled.
pub fn merge_labels(
    split: &SplitAssignment,
    true_s: &LabelVector,
    pseudo_u: &LabelVector,
) -> Result<LabelVector> {
    let n = split.len();
    for v in [true_s, pseudo_u] {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
    }
    let mut out = LabelVector::unlabeled(n);
    for (i, role) in split.roles.iter().enumerate() {
        let label = match role {
            Role::Supervised => Label::True(true_s.class(i).ok_or(Error::MissingLabel(i))?),
            Role::Unsupervised => Label::Pseudo(pseudo_u.class(i).ok_or(Error::MissingLabel(i))?),
            Role::Test => Label::Unlabeled,
        };
        out.set(i, label);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(k: usize, per: usize) -> Dataset {
        let n = k * per;
        let feats = Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let labels = (0..n).map(|i| i / per).collect();
        Dataset::new("balanced", feats, Some(labels), k).unwrap()
    }

    #[test]
    fn three_balanced_classes_split_counts() {
        let ds = balanced(3, 100);
        let split = stratified_split(&ds, SplitFractions::DEFAULT, 11).unwrap();
        assert_eq!(split.count(Role::Supervised), 3);
        assert_eq!(split.count(Role::Test), 90);
        assert_eq!(split.count(Role::Unsupervised), 207);
        let labels = ds.labels().unwrap();
        for c in 0..3 {
            let s = split
                .indices(Role::Supervised)
                .iter()
                .filter(|&&i| labels[i] == c)
                .count();
            assert_eq!(s, 1);
        }
    }

    #[test]
    fn supervised_size_uses_ceiling() {
        // Eight unbalanced classes, 1668 samples: ceil(16.68) = 17 supervised,
        // round(500.4) = 500 test.
        let counts = [348usize, 80, 148, 122, 337, 375, 122, 136];
        let n: usize = counts.iter().sum();
        assert_eq!(n, 1668);
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &m)| std::iter::repeat(c).take(m))
            .collect();
        let feats = Matrix::zeros(n, 1);
        let ds = Dataset::new("eggs", feats, Some(labels), 8).unwrap();
        let split = stratified_split(&ds, SplitFractions::DEFAULT, 0).unwrap();
        assert_eq!(split.count(Role::Supervised), 17);
        assert_eq!(split.count(Role::Test), 500);
        assert_eq!(split.count(Role::Unsupervised), 1151);
    }

    #[test]
    fn tiny_class_is_rejected() {
        let feats = Matrix::zeros(8, 1);
        let labels = vec![0, 0, 0, 0, 0, 0, 1, 1];
        let ds = Dataset::new("tiny", feats, Some(labels), 2).unwrap();
        let err = stratified_split(&ds, SplitFractions::DEFAULT, 0).unwrap_err();
        assert!(matches!(err, Error::ClassTooSmall { class: 1, count: 2 }));
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let ds = balanced(2, 10);
        let bad = SplitFractions {
            supervised: 0.1,
            unsupervised: 0.5,
            test: 0.3,
        };
        assert!(stratified_split(&ds, bad, 0).is_err());
    }

    #[test]
    fn merge_assigns_provenance_by_role() {
        let split = SplitAssignment {
            roles: vec![Role::Supervised, Role::Unsupervised, Role::Unsupervised, Role::Test],
            seed: 0,
            fractions: SplitFractions::DEFAULT,
        };
        let mut true_s = LabelVector::unlabeled(4);
        true_s.set(0, Label::True(0));
        let mut pseudo = LabelVector::unlabeled(4);
        pseudo.set(1, Label::Pseudo(1));
        pseudo.set(2, Label::Pseudo(0));
        pseudo.set(3, Label::Pseudo(1));
        let merged = merge_labels(&split, &true_s, &pseudo).unwrap();
        assert_eq!(
            merged.entries(),
            &[Label::True(0), Label::Pseudo(1), Label::Pseudo(0), Label::Unlabeled]
        );
    }

    #[test]
    fn merge_with_empty_unsupervised_part() {
        let split = SplitAssignment {
            roles: vec![Role::Supervised, Role::Supervised, Role::Test],
            seed: 0,
            fractions: SplitFractions::DEFAULT,
        };
        let true_s = LabelVector::from_true(&[1, 0, 1]);
        let merged = merge_labels(&split, &true_s, &LabelVector::unlabeled(3)).unwrap();
        assert_eq!(
            merged.entries(),
            &[Label::True(1), Label::True(0), Label::Unlabeled]
        );
    }

    #[test]
    fn merge_requires_pseudo_label_on_every_unsupervised_index() {
        let split = SplitAssignment {
            roles: vec![Role::Supervised, Role::Unsupervised],
            seed: 0,
            fractions: SplitFractions::DEFAULT,
        };
        let err = merge_labels(
            &split,
            &LabelVector::from_true(&[0, 0]),
            &LabelVector::unlabeled(2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingLabel(1)));
    }

    #[test]
    fn blobs_are_deterministic_and_spaced() {
        let spec = BlobSpec {
            classes: 2,
            per_class: 50,
            dims: 2,
            spread: 0.1,
            center_dist: 10.0,
            seed: 7,
        };
        let a = generate_blobs(&spec).unwrap();
        let b = generate_blobs(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        let mean = |c: usize| -> Vec<f64> {
            let rows: Vec<usize> = (0..100).filter(|&i| a.labels().unwrap()[i] == c).collect();
            (0..2)
                .map(|j| rows.iter().map(|&i| a.features().get(i, j)).sum::<f64>() / rows.len() as f64)
                .collect()
        };
        // Empirical means sit within a few spread units of the true centers.
        assert!(euclidean(&mean(0), &mean(1)) >= 10.0 - 0.2);
    }

    #[test]
    fn impossible_center_placement_errors() {
        let mut rng = seeded(1);
        let err = place_centers(5, 1, 10.0, 1.0, 100, &mut rng).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
