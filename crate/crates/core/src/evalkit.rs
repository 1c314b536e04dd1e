//! Offline evaluation of hallucination detectors: Rouge-L correctness
//! labels, AUROC, best-threshold accuracy and tabular reports.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rouge-L F-measure at or above this counts as a correct answer.
pub const DEFAULT_ROUGE_TAU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {left} answers vs {right} references")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate label set")]
    DegenerateLabels,
    #[error("no records")]
    Empty,
    #[error("non-finite score for {qid}")]
    NonFinite { qid: String },
    #[error("method {method}: {reason}")]
    Misaligned { method: String, reason: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub qid: String,
    /// Detector output; higher predicts hallucination.
    pub score: f64,
    /// True if the answer is incorrect.
    pub label: bool,
}

impl EvalRecord {
    pub fn new(qid: impl Into<String>, score: f64, label: bool) -> Self {
        EvalRecord {
            qid: qid.into(),
            score,
            label,
        }
    }
}

/// Lowercases, drops every character that is neither alphanumeric nor
/// whitespace, and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Rouge-L F1 between two token sequences. Zero if either is empty.
pub fn rouge_l_f<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Best Rouge-L F1 of `answer` against any of `references`.
pub fn best_rouge_l(answer: &str, references: &[String]) -> f64 {
    let cand = tokenize(answer);
    references
        .iter()
        .map(|r| rouge_l_f(&cand, &tokenize(r)))
        .fold(0.0, f64::max)
}

/// `true` marks a hallucinated answer: its best Rouge-L is below `tau`.
pub fn label_correctness(
    answers: &[String],
    references: &[Vec<String>],
    tau: f64,
) -> Result<Vec<bool>, EvalError> {
    if answers.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            left: answers.len(),
            right: references.len(),
        });
    }
    Ok(answers
        .iter()
        .zip(references)
        .map(|(a, refs)| best_rouge_l(a, refs) < tau)
        .collect())
}

fn sorted_by_score(records: &[EvalRecord]) -> Result<Vec<&EvalRecord>, EvalError> {
    if let Some(r) = records.iter().find(|r| !r.score.is_finite()) {
        return Err(EvalError::NonFinite { qid: r.qid.clone() });
    }
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    Ok(sorted)
}

/// Groups of (positives, negatives) sharing one score, in ascending score order.
fn tie_groups(sorted: &[&EvalRecord]) -> Vec<(f64, u64, u64)> {
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for r in sorted {
        match groups.last_mut() {
            Some(g) if g.0 == r.score => {
                if r.label {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((r.score, r.label as u64, (!r.label) as u64)),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(records: &[EvalRecord]) -> Result<f64, EvalError> {
    let sorted = sorted_by_score(records)?;
    let positives = records.iter().filter(|r| r.label).count() as u64;
    let negatives = records.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    // twice the Mann-Whitney U statistic, kept integral
    let mut twice_u: u128 = 0;
    let mut negatives_below: u64 = 0;
    for (_, pos, neg) in tie_groups(&sorted) {
        twice_u += 2 * pos as u128 * negatives_below as u128 + pos as u128 * neg as u128;
        negatives_below += neg;
    }
    Ok(twice_u as f64 / (2.0 * positives as f64 * negatives as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    /// Predict hallucination iff `score >= threshold`. Infinite when the best
    /// rule flags nothing.
    pub threshold: f64,
}

/// Highest accuracy over every cut of the sorted scores. Among equally good
/// cuts the lowest threshold wins.
pub fn best_accuracy(records: &[EvalRecord]) -> Result<Accuracy, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let sorted = sorted_by_score(records)?;
    let groups = tie_groups(&sorted);
    let n = records.len() as u64;
    let total_pos: u64 = groups.iter().map(|g| g.1).sum();

    // threshold = lowest score: everything is flagged
    let mut correct = total_pos;
    let mut best = (correct, groups[0].0);
    for (k, &(_, pos, neg)) in groups.iter().enumerate() {
        // moving the cut above group k un-flags it
        correct = correct - pos + neg;
        let threshold = groups.get(k + 1).map_or(f64::INFINITY, |g| g.0);
        if correct > best.0 {
            best = (correct, threshold);
        }
    }
    Ok(Accuracy {
        accuracy: best.0 as f64 / n as f64,
        threshold: best.1,
    })
}

/// One line of an evaluation records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub qid: String,
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub answer: String,
    #[serde(default)]
    pub references: Vec<String>,
    /// Externally supplied label (e.g. semantic similarity); `true` means
    /// the answer is hallucinated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ext_label: Option<bool>,
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<DatasetRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Scores of several methods over one shared set of questions.
#[derive(Debug, Clone, Default)]
pub struct EvalRun {
    pub qids: Vec<String>,
    /// Rouge-L derived labels.
    pub labels: Vec<bool>,
    /// Externally supplied labels, when every record has one.
    pub ext_labels: Option<Vec<bool>>,
    pub methods: Vec<(String, Vec<f64>)>,
}

impl EvalRun {
    /// Labels each record with Rouge-L against its references and collects
    /// the listed methods' scores. Every record must carry every method.
    pub fn from_dataset(records: &[DatasetRecord], methods: &[String], tau: f64) -> Result<Self, EvalError> {
        let answers: Vec<String> = records.iter().map(|r| r.answer.clone()).collect();
        let refs: Vec<Vec<String>> = records.iter().map(|r| r.references.clone()).collect();
        let labels = label_correctness(&answers, &refs, tau)?;
        let ext_labels = records.iter().map(|r| r.ext_label).collect::<Option<Vec<_>>>();
        let mut cols = Vec::with_capacity(methods.len());
        for m in methods {
            let scores = records
                .iter()
                .map(|r| {
                    r.scores.get(m).copied().ok_or_else(|| EvalError::Misaligned {
                        method: m.clone(),
                        reason: format!("record {} has no score", r.qid),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            cols.push((m.clone(), scores));
        }
        Ok(EvalRun {
            qids: records.iter().map(|r| r.qid.clone()).collect(),
            labels,
            ext_labels,
            methods: cols,
        })
    }

    /// Methods present in every record, in sorted order.
    pub fn common_methods(records: &[DatasetRecord]) -> Vec<String> {
        let Some(first) = records.first() else {
            return Vec::new();
        };
        first
            .scores
            .keys()
            .filter(|m| records.iter().all(|r| r.scores.contains_key(*m)))
            .cloned()
            .collect()
    }

    fn records(&self, scores: &[f64], labels: &[bool]) -> Vec<EvalRecord> {
        scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&s, &l))| {
                let qid = self.qids.get(i).cloned().unwrap_or_else(|| i.to_string());
                EvalRecord::new(qid, s, l)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    /// AUROC against external labels, when supplied.
    pub auc_s: Option<f64>,
    /// AUROC against Rouge-L labels.
    pub auc_r: f64,
    /// Best-threshold accuracy against Rouge-L labels.
    pub acc_r: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

pub fn report(run: &EvalRun) -> Result<Report, EvalError> {
    let n = run.labels.len();
    if let Some(ext) = &run.ext_labels {
        if ext.len() != n {
            return Err(EvalError::Misaligned {
                method: "ext_label".into(),
                reason: format!("{} labels for {n} records", ext.len()),
            });
        }
    }
    let mut rows = Vec::with_capacity(run.methods.len());
    for (method, scores) in &run.methods {
        if scores.len() != n {
            return Err(EvalError::Misaligned {
                method: method.clone(),
                reason: format!("{} scores for {n} labels", scores.len()),
            });
        }
        let recs = run.records(scores, &run.labels);
        let acc = best_accuracy(&recs)?;
        let auc_s = match &run.ext_labels {
            Some(ext) => Some(auroc(&run.records(scores, ext))?),
            None => None,
        };
        rows.push(ReportRow {
            method: method.clone(),
            auc_s,
            auc_r: auroc(&recs)?,
            acc_r: acc.accuracy,
            threshold: acc.threshold,
        });
    }
    Ok(Report { rows })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    method: String,
    auc_s: Option<f64>,
    auc_r: f64,
    acc_r: f64,
    threshold: f64,
}

impl Report {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(CsvRow {
                method: r.method.clone(),
                auc_s: r.auc_s,
                auc_r: r.auc_r,
                acc_r: r.acc_r,
                threshold: r.threshold,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, EvalError> {
        let mut rd = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for row in rd.deserialize() {
            let r: CsvRow = row?;
            rows.push(ReportRow {
                method: r.method,
                auc_s: r.auc_s,
                auc_r: r.auc_r,
                acc_r: r.acc_r,
                threshold: r.threshold,
            });
        }
        Ok(Report { rows })
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
        writeln!(f, "{:<width$}  {:>7}  {:>7}  {:>7}", "Method", "AUCs", "AUCr", "ACCr")?;
        for r in &self.rows {
            let auc_s = r.auc_s.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            writeln!(
                f,
                "{:<width$}  {:>7}  {:>7.4}  {:>7.4}",
                r.method, auc_s, r.auc_r, r.acc_r
            )?;
        }
        Ok(())
    }
}
