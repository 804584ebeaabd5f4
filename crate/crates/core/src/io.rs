//! Plain-text study files: whitespace-delimited `X.txt` and `Z.txt` (one row
//! per unit), `pheno.csv` with header `unit_id,y`, and a JSON sidecar
//! `meta.json`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AscertainmentScheme, Dataset};
use crate::simgen::{SimConfig, SimStudy};

pub const X_FILE: &str = "X.txt";
pub const Z_FILE: &str = "Z.txt";
pub const PHENO_FILE: &str = "pheno.csv";
pub const META_FILE: &str = "meta.json";

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in m.outer_iter() {
        let mut first = true;
        for v in row {
            if !first {
                w.write_all(b" ")?;
            }
            write!(w, "{v}")?;
            first = false;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a whitespace-delimited matrix; an empty line is a row with no columns.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut data = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0;
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, format!("line {}: '{tok}' is not a number", ln + 1)))?;
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(parse_err(
                    path,
                    format!("line {} has {width} fields, expected {c}", ln + 1),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data).map_err(|e| parse_err(path, e.to_string()))
}

pub fn write_phenotypes(path: &Path, y: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "unit_id,y")?;
    for (i, v) in y.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `unit_id,y`; rows must list units `0..n` in order.
pub fn read_phenotypes(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("unit_id,y") => {}
        other => return Err(parse_err(path, format!("expected header 'unit_id,y', found {other:?}"))),
    }
    let mut y = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, v) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, format!("line {}: expected two fields", ln + 2)))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| parse_err(path, format!("line {}: bad unit id '{id}'", ln + 2)))?;
        if id != y.len() {
            return Err(parse_err(path, format!("line {}: unit id {id} out of order", ln + 2)));
        }
        match v.trim() {
            "0" => y.push(0),
            "1" => y.push(1),
            other => return Err(parse_err(path, format!("line {}: y = '{other}' is not 0/1", ln + 2))),
        }
    }
    Ok(y)
}

/// Generative truth recorded next to a simulated study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrueParams {
    pub theta: f64,
    pub beta: Vec<f64>,
    pub sigma_c2: f64,
    pub sigma_eps2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyMetadata {
    pub library_version: String,
    pub config: SimConfig,
    pub seed: u64,
    pub truth: TrueParams,
    pub scheme: AscertainmentScheme,
    pub population_threshold: f64,
    pub population_cases: usize,
    pub true_freqs: Vec<f64>,
    pub est_freqs: Vec<f64>,
    /// Population rows of the sampled units.
    pub rows: Vec<usize>,
}

impl StudyMetadata {
    pub fn new(cfg: &SimConfig, study: &SimStudy) -> Self {
        Self {
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            seed: cfg.seed,
            truth: TrueParams {
                theta: study.true_params.theta,
                beta: study.true_params.beta.to_vec(),
                sigma_c2: study.true_params.sigma_c2,
                sigma_eps2: study.true_params.sigma_eps2,
            },
            scheme: study.scheme,
            population_threshold: study.threshold,
            population_cases: study.population_cases,
            true_freqs: study.true_freqs.clone(),
            est_freqs: study.est_freqs.clone(),
            rows: study.rows.clone(),
        }
    }
}

/// Writes the four study files into `dir`, creating it if needed.
pub fn write_study(dir: &Path, cfg: &SimConfig, study: &SimStudy) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join(X_FILE), &study.dataset.x().to_owned())?;
    write_matrix(&dir.join(Z_FILE), &study.dataset.z().to_owned())?;
    write_phenotypes(&dir.join(PHENO_FILE), study.dataset.y())?;
    let meta = StudyMetadata::new(cfg, study);
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Reads `X.txt`, `Z.txt` and `pheno.csv` from `dir`. A missing `X.txt`
/// means no fixed-effect covariates.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let y = read_phenotypes(&dir.join(PHENO_FILE))?;
    let z = read_matrix(&dir.join(Z_FILE))?;
    let xpath = dir.join(X_FILE);
    let x = if xpath.exists() {
        read_matrix(&xpath)?
    } else {
        Array2::zeros((y.len(), 0))
    };
    Dataset::new(x, z, y)
}

pub fn read_metadata(dir: &Path) -> Result<Option<StudyMetadata>> {
    let p = dir.join(META_FILE);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(p)?)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matrix_round_trip_including_empty_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        let m = array![[1.5, -2.0e-17, 3.0], [0.1, 0.2, 1.0 / 3.0]];
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
        let e = Array2::<f64>::zeros((3, 0));
        write_matrix(&p, &e).unwrap();
        assert_eq!(read_matrix(&p).unwrap().dim(), (3, 0));
    }

    #[test]
    fn ragged_matrix_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        fs::write(&p, "1 2\n3\n").unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn phenotypes_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.csv");
        write_phenotypes(&p, &[1, 0, 0, 1]).unwrap();
        assert_eq!(read_phenotypes(&p).unwrap(), vec![1, 0, 0, 1]);
        fs::write(&p, "unit_id,y\n0,1\n1,2\n").unwrap();
        assert!(read_phenotypes(&p).is_err());
        fs::write(&p, "id,y\n0,1\n").unwrap();
        assert!(read_phenotypes(&p).is_err());
    }
}
