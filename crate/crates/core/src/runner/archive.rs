use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{rate_label, ExperimentConfig, PersistedSample, RunOutput};
use crate::domain::Race;
use crate::error::{Error, Result};
use crate::metrics::GroupRisk;
use crate::rashomon::save_sample;

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;

/// One aggregated cell: mean and sample SD over repetitions where the metric was defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub rate: String,
    pub q: u32,
    pub method: String,
    pub mapping: String,
    pub metric: String,
    pub count: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    /// Repetitions where the metric was undefined (for example an empty race group).
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub partition: usize,
    pub draw: Option<usize>,
    pub q: u32,
    pub rate: Option<f64>,
    pub method: Option<String>,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    pub partition: usize,
    pub q: u32,
    pub method: String,
    pub illness_level: u32,
    pub groups: BTreeMap<Race, Option<GroupRisk>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeHistogramRecord {
    pub rate: String,
    pub q: u32,
    /// `ensemble:<method>`, `equal_utility:sampled` or `reference`.
    pub source: String,
    pub repetitions: usize,
    /// Mean selected count per age bracket, youngest first.
    pub mean_counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub n: usize,
    pub provenance: String,
    pub qualification_rates: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub population: PopulationSummary,
    pub repetitions: usize,
    /// How `sd` in metrics.csv is computed.
    pub sd_definition: String,
    pub failures: Vec<FailureRecord>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub manifest: ArchiveManifest,
    pub metrics: Vec<MetricRecord>,
    pub risk: Vec<RiskRecord>,
    pub age_histograms: Vec<AgeHistogramRecord>,
}

impl Archive {
    pub fn metric(
        &self,
        rate: f64,
        q: u32,
        method: &str,
        mapping: &str,
        metric: &str,
    ) -> Result<&MetricRecord> {
        let label = rate_label(rate);
        self.metrics
            .iter()
            .find(|m| {
                m.rate == label
                    && m.q == q
                    && m.method == method
                    && m.mapping == mapping
                    && m.metric == metric
            })
            .ok_or_else(|| {
                Error::MissingMetric(format!(
                    "{metric} for {method}/{mapping} at rate {label}, q={q}"
                ))
            })
    }
}

const METRIC_HEADER: [&str; 9] = [
    "rate", "q", "method", "mapping", "metric", "count", "mean", "sd", "missing",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_persisted(p: &PersistedSample, dir: &Path) -> Result<Vec<String>> {
    save_sample(&p.sample, p.seed_chain.seed, dir)?;
    write_json(&dir.join("models.json"), &p.models)?;
    let mut files = vec![
        "manifest.json".to_string(),
        "scores.csv".into(),
        "models.json".into(),
    ];
    let mut by_rate: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for a in &p.allocations {
        by_rate.entry(rate_label(a.rate)).or_default().push(a);
    }
    for (rate, allocs) in by_rate {
        let name = format!("allocations_rate{rate}.json");
        write_json(&dir.join(&name), &allocs)?;
        files.push(name);
    }
    Ok(files)
}

/// Write the full archive. Contents depend only on the run, so reruns are byte-identical.
pub fn write_archive(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![
        "metrics.csv".to_string(),
        "risk_by_group.json".into(),
        "age_histograms.json".into(),
    ];

    let path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(METRIC_HEADER)?;
    for m in &out.metrics {
        w.write_record([
            m.rate.clone(),
            m.q.to_string(),
            m.method.clone(),
            m.mapping.clone(),
            m.metric.clone(),
            m.count.to_string(),
            opt(m.mean),
            opt(m.sd),
            m.missing.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_json(&dir.join("risk_by_group.json"), &out.risk)?;
    write_json(&dir.join("age_histograms.json"), &out.age_histograms)?;

    for p in &out.persisted {
        let rel = format!(
            "samples/{}/q{}/sim{:03}",
            p.sample.method.as_str(),
            p.q,
            p.simulation
        );
        for f in write_persisted(p, &dir.join(&rel))? {
            files.push(format!("{rel}/{f}"));
        }
    }

    let archive = Archive {
        manifest: ArchiveManifest {
            format_version: ARCHIVE_FORMAT_VERSION,
            config: out.config.clone(),
            population: out.population.clone(),
            repetitions: out.repetitions,
            sd_definition:
                "sample standard deviation (n - 1) across all partition x draw repetitions".into(),
            failures: out.failures.clone(),
            files: Vec::new(),
        },
        metrics: out.metrics.clone(),
        risk: out.risk.clone(),
        age_histograms: out.age_histograms.clone(),
    };
    let figures = dir.join("figures");
    std::fs::create_dir_all(&figures).map_err(|e| Error::io(&figures, e))?;
    for id in super::FIGURE_IDS {
        match super::figure_csv(&archive, id) {
            Ok(text) => {
                let path = figures.join(format!("{id}.csv"));
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                files.push(format!("figures/{id}.csv"));
            }
            Err(e) => log::warn!("figure {id} not written: {e}"),
        }
    }

    let mut manifest = archive.manifest;
    files.insert(0, "manifest.json".into());
    manifest.files = files;
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_archive(dir: &Path) -> Result<Archive> {
    let manifest: ArchiveManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.format_version != ARCHIVE_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported archive format version {}",
            manifest.format_version
        )));
    }
    let path = dir.join("metrics.csv");
    let mut r = csv::Reader::from_path(&path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRIC_HEADER {
        return Err(Error::Schema(format!(
            "unexpected metrics.csv header {header:?}"
        )));
    }
    let mut metrics = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |column: &str, message: String| Error::Data {
            row: row + 1,
            column: column.to_string(),
            message,
        };
        let num = |i: usize, name: &str| -> Result<Option<f64>> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|e: std::num::ParseFloatError| parse_err(name, e.to_string()))
            }
        };
        let int = |i: usize, name: &str| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|e: std::num::ParseIntError| parse_err(name, e.to_string()))
        };
        metrics.push(MetricRecord {
            rate: rec[0].to_string(),
            q: int(1, "q")? as u32,
            method: rec[2].to_string(),
            mapping: rec[3].to_string(),
            metric: rec[4].to_string(),
            count: int(5, "count")?,
            mean: num(6, "mean")?,
            sd: num(7, "sd")?,
            missing: int(8, "missing")?,
        });
    }
    Ok(Archive {
        manifest,
        metrics,
        risk: read_json(&dir.join("risk_by_group.json"))?,
        age_histograms: read_json(&dir.join("age_histograms.json"))?,
    })
}
