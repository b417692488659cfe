//! Score tables and the dataset-level analyses built on them:
//! intra-subject variability, cross-dataset variability matrices, score
//! binning, and per-group score distributions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The three skin-tone metrics this toolkit produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Ita,
    Rsr,
    Sreds,
}

/// Column order used in cross-dataset report tables.
pub const METRIC_TABLE_ORDER: [Metric; 3] = [Metric::Sreds, Metric::Rsr, Metric::Ita];

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Ita => "ITA",
            Metric::Rsr => "RSR",
            Metric::Sreds => "SREDS",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ITA" => Ok(Metric::Ita),
            "RSR" => Ok(Metric::Rsr),
            "SREDS" => Ok(Metric::Sreds),
            other => Err(Error::CsvFormat {
                line: None,
                message: format!("unknown metric \"{other}\""),
            }),
        }
    }
}

/// One scored sample. `score == None` marks a soft per-sample failure and
/// is written as the literal `NA`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub dataset: String,
    pub subject_id: String,
    pub sample_id: String,
    pub metric: Metric,
    pub score: Option<f64>,
}

/// Ordered score rows, unique per (dataset, subject, sample, metric), plus
/// run provenance that stays in memory (the CSV schema carries rows only).
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRecord>,
    pub trained_on: Option<String>,
    pub seed: Option<u64>,
}

impl ScoreTable {
    pub fn push(&mut self, row: ScoreRecord) -> Result<()> {
        let dup = self.rows.iter().any(|r| {
            r.dataset == row.dataset
                && r.subject_id == row.subject_id
                && r.sample_id == row.sample_id
                && r.metric == row.metric
        });
        if dup {
            return Err(Error::ScoreTable {
                message: format!(
                    "duplicate row ({}, {}, {}, {})",
                    row.dataset, row.subject_id, row.sample_id, row.metric
                ),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    /// (subject, score) pairs for one (dataset, metric) slice, skipping NA.
    pub fn subject_scores(&self, dataset: &str, metric: Metric) -> Vec<(&str, f64)> {
        self.rows
            .iter()
            .filter(|r| r.dataset == dataset && r.metric == metric)
            .filter_map(|r| r.score.map(|s| (r.subject_id.as_str(), s)))
            .collect()
    }

    pub fn datasets(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in &self.rows {
            if seen.insert(r.dataset.clone()) {
                out.push(r.dataset.clone());
            }
        }
        out
    }

    pub fn metrics(&self) -> Vec<Metric> {
        let present: HashSet<Metric> = self.rows.iter().map(|r| r.metric).collect();
        METRIC_TABLE_ORDER
            .iter()
            .copied()
            .filter(|m| present.contains(m))
            .collect()
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["dataset", "subject_id", "sample_id", "metric", "score"])
            .map_err(csv_err)?;
        for r in &self.rows {
            let score = match r.score {
                Some(s) => format!("{s:.8e}"),
                None => "NA".to_string(),
            };
            w.write_record([
                r.dataset.as_str(),
                r.subject_id.as_str(),
                r.sample_id.as_str(),
                r.metric.name(),
                score.as_str(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::CsvFormat {
            line: None,
            message: e.to_string(),
        })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(io::BufWriter::new(file))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        Self::read_csv(text.as_bytes())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(io::BufReader::new(file))
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(csv_err)?.clone();
        let expected = ["dataset", "subject_id", "sample_id", "metric", "score"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::CsvFormat {
                line: Some(1),
                message: format!("expected header {expected:?}, got {headers:?}"),
            });
        }
        let mut table = ScoreTable::default();
        let mut seen: HashSet<(String, String, String, Metric)> = HashSet::new();
        for (idx, record) in r.records().enumerate() {
            let line = idx + 2;
            let record = record.map_err(csv_err)?;
            if record.len() != 5 {
                return Err(Error::CsvFormat {
                    line: Some(line),
                    message: format!("expected 5 fields, got {}", record.len()),
                });
            }
            let score = match &record[4] {
                "NA" => None,
                text => Some(text.parse::<f64>().map_err(|e| Error::CsvFormat {
                    line: Some(line),
                    message: format!("bad score \"{text}\": {e}"),
                })?),
            };
            let row = ScoreRecord {
                dataset: record[0].to_string(),
                subject_id: record[1].to_string(),
                sample_id: record[2].to_string(),
                metric: record[3].parse()?,
                score,
            };
            let key = (
                row.dataset.clone(),
                row.subject_id.clone(),
                row.sample_id.clone(),
                row.metric,
            );
            if !seen.insert(key) {
                return Err(Error::CsvFormat {
                    line: Some(line),
                    message: format!(
                        "duplicate row ({}, {}, {}, {})",
                        row.dataset, row.subject_id, row.sample_id, row.metric
                    ),
                });
            }
            table.rows.push(row);
        }
        Ok(table)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::CsvFormat {
        line: None,
        message: e.to_string(),
    }
}

/// Mean per-subject sample standard deviation for one score slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variability {
    pub mean_sd: f64,
    /// Subjects that entered the mean (those with ≥2 samples).
    pub subjects: usize,
    /// Subjects dropped for having a single sample.
    pub excluded_singletons: usize,
}

/// Mean over subjects of the per-subject sample standard deviation
/// (n−1 denominator). With `normalize` the slice is z-normalized first so
/// metrics with different native scales become comparable.
pub fn intra_subject_variability<S: AsRef<str>>(
    pairs: &[(S, f64)],
    normalize: bool,
) -> Result<Variability> {
    let mut scores: Vec<f64> = pairs.iter().map(|(_, s)| *s).collect();
    if normalize {
        if scores.len() < 2 {
            return Err(Error::NotEnoughScores {
                found: scores.len(),
                required: 2,
            });
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var.is_nan() || var <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        let sd = var.sqrt();
        for s in &mut scores {
            *s = (*s - mean) / sd;
        }
    }
    let mut by_subject: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ((subject, _), score) in pairs.iter().zip(scores.iter()) {
        by_subject.entry(subject.as_ref()).or_default().push(*score);
    }
    let mut sum_sd = 0.0;
    let mut used = 0usize;
    let mut singletons = 0usize;
    for values in by_subject.values() {
        if values.len() < 2 {
            singletons += 1;
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        sum_sd += var.sqrt();
        used += 1;
    }
    if used == 0 {
        return Err(Error::NoRepeatedSubjects);
    }
    Ok(Variability {
        mean_sd: sum_sd / used as f64,
        subjects: used,
        excluded_singletons: singletons,
    })
}

/// One cell of a cross-dataset variability table. `value == None` renders
/// as `NA` (the ITA off-diagonal, which has no training component).
#[derive(Debug, Clone, PartialEq)]
pub struct VariabilityEntry {
    pub train: String,
    pub test: String,
    pub metric: Metric,
    pub value: Option<f64>,
    pub subjects: usize,
    pub excluded_singletons: usize,
    pub normalized: bool,
}

/// Full train × test × metric grid in deterministic order.
#[derive(Debug, Clone, Default)]
pub struct VariabilityReport {
    pub entries: Vec<VariabilityEntry>,
}

impl VariabilityReport {
    pub fn cell(&self, train: &str, test: &str, metric: Metric) -> Option<&VariabilityEntry> {
        self.entries
            .iter()
            .find(|e| e.train == train && e.test == test && e.metric == metric)
    }

    fn ordered_axes(&self) -> (Vec<String>, Vec<String>, Vec<Metric>) {
        let mut trains = Vec::new();
        let mut tests = Vec::new();
        for e in &self.entries {
            if !trains.contains(&e.train) {
                trains.push(e.train.clone());
            }
            if !tests.contains(&e.test) {
                tests.push(e.test.clone());
            }
        }
        let present: HashSet<Metric> = self.entries.iter().map(|e| e.metric).collect();
        let metrics = METRIC_TABLE_ORDER
            .iter()
            .copied()
            .filter(|m| present.contains(m))
            .collect();
        (trains, tests, metrics)
    }

    /// Wide CSV: one row per training dataset, one column per
    /// (test dataset, metric); absent cells are literal `NA`.
    pub fn write_cross_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let (trains, tests, metrics) = self.ordered_axes();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["train_dataset".to_string()];
        for test in &tests {
            for metric in &metrics {
                header.push(format!("{test}:{metric}"));
            }
        }
        w.write_record(&header).map_err(csv_err)?;
        for train in &trains {
            let mut row = vec![train.clone()];
            for test in &tests {
                for metric in &metrics {
                    let text = match self.cell(train, test, *metric).and_then(|e| e.value) {
                        Some(v) => format!("{v:.8e}"),
                        None => "NA".to_string(),
                    };
                    row.push(text);
                }
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::CsvFormat {
            line: None,
            message: e.to_string(),
        })
    }

    /// Long CSV: one row per cell with subject counts, for single-dataset
    /// variability reports.
    pub fn write_long_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "train_dataset",
            "test_dataset",
            "metric",
            "mean_intra_subject_sd",
            "subjects",
            "excluded_singletons",
            "normalized",
        ])
        .map_err(csv_err)?;
        for e in &self.entries {
            let value = match e.value {
                Some(v) => format!("{v:.8e}"),
                None => "NA".to_string(),
            };
            w.write_record([
                e.train.as_str(),
                e.test.as_str(),
                e.metric.name(),
                value.as_str(),
                &e.subjects.to_string(),
                &e.excluded_singletons.to_string(),
                if e.normalized { "true" } else { "false" },
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::CsvFormat {
            line: None,
            message: e.to_string(),
        })
    }
}

/// How to discretize a continuous score column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinStrategy {
    /// Two bins split at the median; `score >= threshold` is "high".
    Median,
    /// `k` equal-probability, left-closed bins labeled `q0..q{k-1}`.
    Quantile(usize),
}

/// Label every score per the strategy. Labels are positional, matching the
/// input order.
pub fn bin_scores(scores: &[f64], strategy: BinStrategy) -> Result<Vec<String>> {
    match strategy {
        BinStrategy::Median => {
            if scores.len() < 2 {
                return Err(Error::NotEnoughScores {
                    found: scores.len(),
                    required: 2,
                });
            }
            let threshold = median(scores);
            Ok(scores
                .iter()
                .map(|&s| if s < threshold { "low" } else { "high" }.to_string())
                .collect())
        }
        BinStrategy::Quantile(k) => {
            if k < 2 {
                return Err(Error::BadQuantileCount(k));
            }
            if scores.len() < k {
                return Err(Error::NotEnoughScores {
                    found: scores.len(),
                    required: k,
                });
            }
            let mut sorted = scores.to_vec();
            sorted.sort_by(f64::total_cmp);
            let edges: Vec<f64> = (1..k)
                .map(|i| quantile_linear(&sorted, i as f64 / k as f64))
                .collect();
            Ok(scores
                .iter()
                .map(|&s| {
                    let idx = edges.iter().filter(|&&e| s >= e).count();
                    format!("q{idx}")
                })
                .collect())
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Linear-interpolation quantile of presorted data.
fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

/// Histogram of one group's scores over shared bin edges.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupHistogram {
    pub group: String,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub const DEFAULT_DISTRIBUTION_BINS: usize = 50;

/// Per-group histograms over a common range (the observed min/max across
/// all labeled rows), so group distributions are directly comparable.
pub fn group_distribution(
    rows: &[(String, f64)],
    bins: usize,
) -> Result<Vec<GroupHistogram>> {
    if rows.is_empty() {
        return Err(Error::NoLabeledRows);
    }
    let bins = bins.max(1);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, s) in rows {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut by_group: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for (group, score) in rows {
        let idx = (((score - lo) / width).floor() as i64).clamp(0, bins as i64 - 1) as usize;
        by_group.entry(group.as_str()).or_insert_with(|| vec![0; bins])[idx] += 1;
    }
    Ok(by_group
        .into_iter()
        .map(|(group, counts)| GroupHistogram {
            group: group.to_string(),
            edges: edges.clone(),
            counts,
        })
        .collect())
}

/// Write group histograms as CSV rows (group, bin index, edges, count).
pub fn write_distribution_csv<W: io::Write>(
    histograms: &[GroupHistogram],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "bin_index", "bin_start", "bin_end", "count"])
        .map_err(csv_err)?;
    for h in histograms {
        for (i, &count) in h.counts.iter().enumerate() {
            w.write_record([
                h.group.as_str(),
                &i.to_string(),
                &format!("{:.8e}", h.edges[i]),
                &format!("{:.8e}", h.edges[i + 1]),
                &count.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::CsvFormat {
        line: None,
        message: e.to_string(),
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - ma) * (y - mb);
        da += (x - ma).powi(2);
        db += (y - mb).powi(2);
    }
    if da <= 0.0 || db <= 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}

/// Join group labels onto score rows by (subject, sample) for distribution
/// reports; rows without a label are dropped.
pub fn labeled_scores(
    table: &ScoreTable,
    labels: &HashMap<(String, String), String>,
) -> Vec<(String, f64)> {
    table
        .rows
        .iter()
        .filter_map(|r| {
            let score = r.score?;
            let label = labels.get(&(r.subject_id.clone(), r.sample_id.clone()))?;
            Some((label.clone(), score))
        })
        .collect()
}
