//! Small CSV artifacts passed between CLI stages.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use epl_core::dataset::{Role, SplitAssignment, SplitFractions};
use epl_core::Matrix;

use crate::error::{CliError, Result};

fn bad(path: &Path, line: usize, message: impl std::fmt::Display) -> CliError {
    CliError::Input {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// `index,x,y,role,label` per embedded sample.
pub fn write_embedding(
    path: &Path,
    indices: &[usize],
    coords: &Matrix,
    roles: &[Role],
    labels: &[usize],
) -> Result<()> {
    let mut text = String::from("index,x,y,role,label\n");
    for (p, &i) in indices.iter().enumerate() {
        let _ = writeln!(
            text,
            "{i},{},{},{},{}",
            coords.get(p, 0),
            coords.get(p, 1),
            roles[p].code(),
            labels[p]
        );
    }
    write(path, &text)
}

/// Reads the `index`, `x` and `y` columns of an embedding file.
pub fn read_embedding(path: &Path) -> Result<(Vec<usize>, Matrix)> {
    let text = read(path)?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 3 {
            return Err(bad(path, k + 1, "expected index,x,y"));
        }
        indices.push(f[0].parse::<usize>().map_err(|e| bad(path, k + 1, e))?);
        for v in &f[1..3] {
            let v: f64 = v.parse().map_err(|e| bad(path, k + 1, e))?;
            if !v.is_finite() {
                return Err(bad(path, k + 1, "non-finite coordinate"));
            }
            values.push(v);
        }
    }
    let n = indices.len();
    Ok((indices, Matrix::new(n, 2, values)?))
}

/// Header line with seed and fractions, then `index,role` with role S/U/T.
pub fn write_split(path: &Path, split: &SplitAssignment) -> Result<()> {
    let f = split.fractions;
    let mut text = format!(
        "# seed={} supervised={} unsupervised={} test={}\nindex,role\n",
        split.seed, f.supervised, f.unsupervised, f.test
    );
    for (i, r) in split.roles.iter().enumerate() {
        let _ = writeln!(text, "{i},{}", r.code());
    }
    write(path, &text)
}

pub fn read_split(path: &Path) -> Result<SplitAssignment> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(path, 1, "empty split file"))?;
    let mut seed = 0u64;
    let mut fractions = SplitFractions::DEFAULT;
    for token in header.trim_start_matches('#').split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| bad(path, 1, "malformed header"))?;
        match k {
            "seed" => seed = v.parse().map_err(|e| bad(path, 1, e))?,
            "supervised" => fractions.supervised = v.parse().map_err(|e| bad(path, 1, e))?,
            "unsupervised" => fractions.unsupervised = v.parse().map_err(|e| bad(path, 1, e))?,
            "test" => fractions.test = v.parse().map_err(|e| bad(path, 1, e))?,
            _ => return Err(bad(path, 1, format!("unknown header key {k}"))),
        }
    }
    let mut roles = Vec::new();
    for (k, line) in lines.skip(1) {
        let (i, r) = line
            .split_once(',')
            .ok_or_else(|| bad(path, k + 1, "expected index,role"))?;
        let i: usize = i.parse().map_err(|e| bad(path, k + 1, e))?;
        if i != roles.len() {
            return Err(bad(path, k + 1, "indices must be consecutive from 0"));
        }
        let role = r
            .chars()
            .next()
            .and_then(Role::from_code)
            .ok_or_else(|| bad(path, k + 1, format!("unknown role {r:?}")))?;
        roles.push(role);
    }
    Ok(SplitAssignment {
        roles,
        seed,
        fractions,
    })
}

/// `index,label` for every pseudo-labeled sample.
pub fn write_labels(path: &Path, indices: &[usize], labels: &[usize]) -> Result<()> {
    let mut text = String::from("index,label\n");
    for (i, l) in indices.iter().zip(labels) {
        let _ = writeln!(text, "{i},{l}");
    }
    write(path, &text)
}

pub fn read_labels(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(k, line)| {
            let (i, l) = line
                .split_once(',')
                .ok_or_else(|| bad(path, k + 1, "expected index,label"))?;
            Ok((
                i.parse().map_err(|e| bad(path, k + 1, e))?,
                l.trim().parse().map_err(|e| bad(path, k + 1, e))?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.csv");
        let split = SplitAssignment {
            roles: vec![Role::Supervised, Role::Test, Role::Unsupervised],
            seed: 42,
            fractions: SplitFractions::DEFAULT,
        };
        write_split(&p, &split).unwrap();
        assert_eq!(read_split(&p).unwrap(), split);
    }

    #[test]
    fn embedding_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let coords = Matrix::from_rows(&[[0.1, -2.5], [1e-7, 3.0]]).unwrap();
        write_embedding(&p, &[4, 9], &coords, &[Role::Supervised, Role::Unsupervised], &[1, 0]).unwrap();
        let (idx, back) = read_embedding(&p).unwrap();
        assert_eq!(idx, vec![4, 9]);
        assert_eq!(back, coords);
    }
}
