use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::archive::{load_archive, Archive};
use super::{ALL_METHODS, EQUAL_UTILITY, REFERENCE};
use crate::combinatorics::{count_equal_utility, count_grid};
use crate::domain::{AgeBracket, EqualUtilitySpace};
use crate::error::{Error, Result};

pub const FIGURE_IDS: [&str; 6] = ["1-count", "table1", "fig2", "fig3b", "fig4c", "fig6"];

/// The worked example: 10 candidates, 6 qualified, select 5 with 4 qualified.
const COUNT_EXAMPLE: (usize, usize, usize, usize, usize) = (10, 5, 6, 4, 0);

fn needs_archive(id: &str) -> bool {
    !matches!(id, "1-count" | "table1")
}

fn unknown(id: &str) -> Error {
    Error::UnknownFigure {
        id: id.to_string(),
        valid: FIGURE_IDS.join(", "),
    }
}

fn count_figure() -> String {
    let (n, k, np, kp, d) = COUNT_EXAMPLE;
    let space = EqualUtilitySpace::new(n, k, np, kp, d).expect("example parameters are valid");
    format!(
        "n,k,n_prime,k_prime,delta,count\n{n},{k},{np},{kp},{d},{}\n",
        count_equal_utility(&space)
    )
}

fn table1_figure() -> String {
    let mut s = String::from(
        "utility,qualification_rate,n,selection_rate,k,n_prime,k_prime,count,count_1sf\n",
    );
    for c in count_grid() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            c.utility,
            c.qualification_rate,
            c.n,
            c.selection_rate,
            c.k,
            c.n_prime,
            c.k_prime,
            c.count,
            c.count.to_scientific(1)
        );
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Rows of `metrics.csv` restricted to the given metrics, in tidy form.
fn metric_rows(
    archive: &Archive,
    metrics: &[&str],
    keep: impl Fn(&str, &str) -> bool,
) -> Result<String> {
    let mut s = String::from("rate,q,method,mapping,metric,count,mean,sd\n");
    let mut any = false;
    for m in archive
        .metrics
        .iter()
        .filter(|m| metrics.contains(&m.metric.as_str()) && keep(&m.method, &m.mapping))
    {
        any = true;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.rate,
            m.q,
            m.method,
            m.mapping,
            m.metric,
            m.count,
            opt(m.mean),
            opt(m.sd)
        );
    }
    if !any {
        return Err(Error::MissingMetric(format!(
            "archive has no {} records",
            metrics.join("/")
        )));
    }
    Ok(s)
}

/// CSV text for one figure id.
pub fn figure_csv(archive: &Archive, id: &str) -> Result<String> {
    match id {
        "1-count" => Ok(count_figure()),
        "table1" => Ok(table1_figure()),
        "fig2" => metric_rows(
            archive,
            &[
                "threshold_ratio_min",
                "threshold_ratio_mean",
                "threshold_ratio",
            ],
            |method, mapping| {
                mapping == "top_k"
                    || method == REFERENCE
                    || method == ALL_METHODS
                    || (method == EQUAL_UTILITY && mapping == "sampled")
            },
        ),
        "fig3b" => metric_rows(
            archive,
            &["systemic_rejection", "multiple_outcomes", "always_accepted"],
            |_, _| true,
        ),
        "fig4c" => {
            if archive.age_histograms.is_empty() {
                return Err(Error::MissingMetric("archive has no age histograms".into()));
            }
            let mut s = String::from("rate,q,source,age_bracket,mean_count,repetitions\n");
            for h in &archive.age_histograms {
                for (b, c) in AgeBracket::ALL.iter().zip(&h.mean_counts) {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{}",
                        h.rate,
                        h.q,
                        h.source,
                        b.label(),
                        c,
                        h.repetitions
                    );
                }
            }
            Ok(s)
        }
        "fig6" => {
            if archive.risk.is_empty() {
                return Err(Error::MissingMetric(
                    "archive has no risk_by_group records".into(),
                ));
            }
            let mut s =
                String::from("partition,q,method,illness_level,race,individuals,scores,mean,sd,p05,p25,p50,p75,p95\n");
            for r in &archive.risk {
                for (race, g) in &r.groups {
                    let _ = write!(
                        s,
                        "{},{},{},{},{},",
                        r.partition, r.q, r.method, r.illness_level, race
                    );
                    match g {
                        Some(g) => {
                            let q = g.quantiles.map(|x| x.to_string()).join(",");
                            let _ = writeln!(
                                s,
                                "{},{},{},{},{q}",
                                g.individuals, g.scores, g.mean, g.sd
                            );
                        }
                        None => s.push_str("0,0,,,,,,,\n"),
                    }
                }
            }
            Ok(s)
        }
        other => Err(unknown(other)),
    }
}

/// Write `<archive>/figures/<id>.csv`. The two combinatorial figures need no archive.
pub fn emit_plot_data(archive_dir: &Path, id: &str) -> Result<PathBuf> {
    if !FIGURE_IDS.contains(&id) {
        return Err(unknown(id));
    }
    let text = if needs_archive(id) {
        figure_csv(&load_archive(archive_dir)?, id)?
    } else if id == "1-count" {
        count_figure()
    } else {
        table1_figure()
    };
    let dir = archive_dir.join("figures");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{id}.csv"));
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
