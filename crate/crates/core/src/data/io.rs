use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{age_band_column, FEATURE_COLUMNS, N_FEATURES, OUTCOME_COLUMN, RACE_COLUMN};
use crate::domain::{AgeBracket, CandidatePool, Individual, Race};
use crate::error::{Error, Result};

pub const POPULATION_FORMAT_VERSION: u32 = 1;

/// Parse a population CSV. Extra columns are ignored; row numbers in errors count
/// data rows from 1.
pub fn read_csv<R: std::io::Read>(reader: R, q: u32) -> Result<CandidatePool> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = r.headers()?.clone();
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let locate = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let feature_idx = FEATURE_COLUMNS
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;
    let race_idx = locate(RACE_COLUMN)?;
    let outcome_idx = locate(OUTCOME_COLUMN)?;

    let mut individuals = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = rec.get(idx).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::Data {
                row,
                column: name.to_string(),
                message: if raw.is_empty() {
                    "missing value".into()
                } else {
                    format!("`{raw}` is not a number")
                },
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    row,
                    column: name.to_string(),
                    message: format!("`{raw}` is not finite"),
                });
            }
            Ok(v)
        };
        let features = feature_idx
            .iter()
            .zip(FEATURE_COLUMNS)
            .map(|(&idx, name)| cell(idx, name))
            .collect::<Result<Vec<_>>>()?;
        let bands: Vec<AgeBracket> = AgeBracket::ALL
            .into_iter()
            .filter(|&b| features[age_band_column(b)] == 1.0)
            .collect();
        let [age] = bands[..] else {
            return Err(Error::Data {
                row,
                column: "dem_age_band_*_tm1".into(),
                message: format!("expected exactly one age band set, found {}", bands.len()),
            });
        };
        let outcome = cell(outcome_idx, OUTCOME_COLUMN)?;
        if outcome < 0.0 || outcome.fract() != 0.0 || outcome > f64::from(u32::MAX) {
            return Err(Error::Data {
                row,
                column: OUTCOME_COLUMN.into(),
                message: format!("{outcome} is not a nonnegative integer count"),
            });
        }
        let race: Race = rec
            .get(race_idx)
            .unwrap_or("")
            .parse()
            .expect("race parsing is infallible");
        individuals.push(Individual::new(features, race, age, outcome as u32));
    }
    Ok(CandidatePool::new(individuals, q))
}

pub fn load_csv(path: &Path, q: u32) -> Result<CandidatePool> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), q)
}

pub fn write_csv<W: std::io::Write>(pool: &CandidatePool, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FEATURE_COLUMNS.to_vec();
    header.extend([RACE_COLUMN, OUTCOME_COLUMN]);
    w.write_record(&header)?;
    for ind in pool.individuals() {
        if ind.features.len() != N_FEATURES {
            return Err(Error::Dimension {
                expected: N_FEATURES,
                got: ind.features.len(),
            });
        }
        let mut row: Vec<String> = ind.features.iter().map(f64::to_string).collect();
        row.push(ind.race.as_str().to_string());
        row.push(ind.chronic_illnesses.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<csv>"), e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationManifest {
    pub format_version: u32,
    pub q: u32,
    pub n: usize,
    pub seed: Option<u64>,
    /// Free-form description of where the rows came from.
    pub provenance: String,
}

/// Write `population.csv` and `manifest.json` into `dir`.
pub fn save_population(
    pool: &CandidatePool,
    dir: &Path,
    seed: Option<u64>,
    provenance: &str,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("population.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_csv(pool, std::io::BufWriter::new(file))?;
    let manifest = PopulationManifest {
        format_version: POPULATION_FORMAT_VERSION,
        q: pool.q(),
        n: pool.n(),
        seed,
        provenance: provenance.to_string(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_population(dir: &Path) -> Result<(CandidatePool, PopulationManifest)> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: PopulationManifest = serde_json::from_str(&text)?;
    if manifest.format_version != POPULATION_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported population format version {}",
            manifest.format_version
        )));
    }
    let pool = load_csv(&dir.join("population.csv"), manifest.q)?;
    if pool.n() != manifest.n {
        return Err(Error::Schema(format!(
            "manifest lists {} rows but the CSV has {}",
            manifest.n,
            pool.n()
        )));
    }
    Ok((pool, manifest))
}
