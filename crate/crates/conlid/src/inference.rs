//! Inference-side operations: top-k prediction, two-model ensembling, the
//! five-step recovery filter for unlabeled documents, and the prediction
//! file format.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::corpus::label_script;
use crate::error::{Error, Result};
use crate::model::Model;

/// Top-1 probability a recovered document must exceed (strictly).
pub const RECOVERY_MIN_PROB: f64 = 0.95;
/// Unknown-n-gram ratio a recovered document must stay under (strictly).
pub const RECOVERY_MAX_UNK_RATIO: f64 = 0.05;
/// Longest run of consecutive single-letter tokens a recovered document may
/// contain.
pub const RECOVERY_MAX_SINGLE_LETTER_RUN: usize = 2;

/// One scored label.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    pub prob: f64,
    /// Fraction of the document's character n-grams unseen in training.
    pub unk_ngram_ratio: f64,
}

/// A full class distribution with its label names, as produced by one
/// model; probabilities are parallel to `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDist {
    pub labels: Vec<String>,
    pub probs: Vec<f64>,
}

impl Model {
    /// The complete softmax distribution for `text`.
    pub fn predict_dist(&self, text: &str) -> LabelDist {
        let fwd = self.forward(text);
        LabelDist {
            labels: self.labels.labels().to_vec(),
            probs: fwd.probs,
        }
    }
}

/// Class indices ranked by probability, ties broken toward the smaller
/// class id.
fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

/// The single most probable label.
pub fn predict(model: &Model, text: &str) -> Prediction {
    predict_topk(model, text, 1)
        .expect("k = 1 is always valid")
        .pop()
        .expect("at least one class")
}

/// The `k` most probable labels, ranked by probability with ties broken
/// toward the smaller class id. `k` is clamped to the number of classes but
/// must be at least 1.
pub fn predict_topk(model: &Model, text: &str, k: usize) -> Result<Vec<Prediction>> {
    if k == 0 {
        return Err(Error::Config("topk must be at least 1".into()));
    }
    let fwd = model.forward(text);
    let order = ranked(&fwd.probs);
    Ok(order
        .into_iter()
        .take(k)
        .map(|c| Prediction {
            label: model
                .labels
                .label(c)
                .expect("class ids are contiguous")
                .to_string(),
            prob: fwd.probs[c],
            unk_ngram_ratio: fwd.unk_ngram_ratio,
        })
        .collect())
}

fn check_dist(dist: &LabelDist, which: &str) -> Result<()> {
    if dist.labels.is_empty() {
        return Err(Error::Empty(format!("{which} distribution")));
    }
    if dist.labels.len() != dist.probs.len() {
        return Err(Error::LengthMismatch {
            what: format!("{which} labels vs probabilities"),
            left: dist.labels.len(),
            right: dist.probs.len(),
        });
    }
    let sum: f64 = dist.probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!(
            "{which} probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

fn share_labels(a: &LabelDist, b: &LabelDist) -> bool {
    let set: std::collections::HashSet<&str> = a.labels.iter().map(String::as_str).collect();
    b.labels.iter().any(|l| set.contains(l.as_str()))
}

fn top_of(dist: &LabelDist) -> (usize, f64) {
    let order = ranked(&dist.probs);
    (order[0], dist.probs[order[0]])
}

/// Max-confidence ensembling: returns the top-1 of whichever distribution
/// assigns its winner the larger probability; model A wins exact ties.
pub fn ensemble_max(a: &LabelDist, b: &LabelDist) -> Result<(String, f64)> {
    check_dist(a, "first")?;
    check_dist(b, "second")?;
    if !share_labels(a, b) {
        return Err(Error::DisjointLabels);
    }
    let (ia, pa) = top_of(a);
    let (ib, pb) = top_of(b);
    if pa >= pb {
        Ok((a.labels[ia].clone(), pa))
    } else {
        Ok((b.labels[ib].clone(), pb))
    }
}

/// The averaged, zero-filled distribution, in sorted label order. Labels
/// missing from one model are treated as probability zero there.
pub fn averaged_dist(a: &LabelDist, b: &LabelDist) -> Result<LabelDist> {
    check_dist(a, "first")?;
    check_dist(b, "second")?;
    if !share_labels(a, b) {
        return Err(Error::DisjointLabels);
    }
    let mut merged: std::collections::BTreeMap<&str, (f64, f64)> = std::collections::BTreeMap::new();
    for (l, &p) in a.labels.iter().zip(&a.probs) {
        merged.entry(l).or_insert((0.0, 0.0)).0 = p;
    }
    for (l, &p) in b.labels.iter().zip(&b.probs) {
        merged.entry(l).or_insert((0.0, 0.0)).1 = p;
    }
    let mut labels = Vec::with_capacity(merged.len());
    let mut probs = Vec::with_capacity(merged.len());
    for (l, (pa, pb)) in merged {
        labels.push(l.to_string());
        probs.push((pa + pb) / 2.0);
    }
    Ok(LabelDist { labels, probs })
}

/// Average ensembling: averages the zero-filled aligned distributions and
/// returns the argmax; ties break toward the lexicographically smaller
/// label.
pub fn ensemble_avg(a: &LabelDist, b: &LabelDist) -> Result<(String, f64)> {
    let avg = averaged_dist(a, b)?;
    let mut best = 0;
    for i in 1..avg.probs.len() {
        if avg.probs[i] > avg.probs[best] {
            best = i;
        }
    }
    Ok((avg.labels[best].clone(), avg.probs[best]))
}

/// Outcome of the five-step recovery filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryVerdict {
    pub accepted: bool,
    /// 1-based indices of the steps that failed, in order. Every step is
    /// always evaluated; there is no short-circuiting.
    pub failed_steps: Vec<u8>,
}

fn is_single_letter(token: &str) -> bool {
    let mut chars = token.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => c.is_alphabetic(),
        _ => false,
    }
}

fn longest_single_letter_run(tokens: &[&str]) -> usize {
    let mut longest = 0;
    let mut run = 0;
    for t in tokens {
        if is_single_letter(t) {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    longest
}

/// Decides whether an unlabeled document can be claimed for the declared
/// script. All five checks run unconditionally:
///
/// 1. the predicted label's script equals `declared_script`;
/// 2. the top-1 probability exceeds [`RECOVERY_MIN_PROB`];
/// 3. the unknown-n-gram ratio stays below [`RECOVERY_MAX_UNK_RATIO`];
/// 4. no run of more than [`RECOVERY_MAX_SINGLE_LETTER_RUN`] consecutive
///    single-letter tokens appears (catching alphabet spam such as
///    "A B C D E" while tolerating ordinary short words);
/// 5. the document has more than one word.
pub fn recover_und(model: &Model, text: &str, declared_script: &str) -> RecoveryVerdict {
    let top = predict(model, text);
    let tokens = crate::encoder::tokenize(text);

    let checks = [
        label_script(&top.label) == declared_script,
        top.prob > RECOVERY_MIN_PROB,
        top.unk_ngram_ratio < RECOVERY_MAX_UNK_RATIO,
        longest_single_letter_run(&tokens) <= RECOVERY_MAX_SINGLE_LETTER_RUN,
        tokens.len() > 1,
    ];

    let failed_steps: Vec<u8> = checks
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| (i + 1) as u8)
        .collect();
    RecoveryVerdict {
        accepted: failed_steps.is_empty(),
        failed_steps,
    }
}

/// Writes prediction rows as `doc_id<TAB>label<TAB>prob`.
pub fn write_predictions<W: Write>(
    w: &mut W,
    rows: &[(String, String, f64)],
) -> std::io::Result<()> {
    for (doc_id, label, prob) in rows {
        writeln!(w, "{doc_id}\t{label}\t{prob}")?;
    }
    Ok(())
}

/// Reads a prediction file written by [`write_predictions`].
pub fn read_predictions(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(id), Some(label), Some(prob)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                detail: "expected doc_id<TAB>label<TAB>prob".into(),
            });
        };
        let prob: f64 = prob.parse().map_err(|_| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            detail: format!("unparseable probability {prob:?}"),
        })?;
        rows.push((id.to_string(), label.to_string(), prob));
    }
    Ok(rows)
}

/// Reads a gold file of `doc_id<TAB>label` rows.
pub fn read_gold(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(id), Some(label)) = (parts.next(), parts.next()) else {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                detail: "expected doc_id<TAB>label".into(),
            });
        };
        rows.push((id.to_string(), label.to_string()));
    }
    Ok(rows)
}
