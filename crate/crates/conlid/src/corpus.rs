//! Dataset records and corpus-level operations: loading, stratified
//! splitting, per-language downsampling, and resource-level bucketing.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Domain assigned to examples that carry no explicit domain tag.
pub const UNKNOWN_DOMAIN: &str = "UNKNOWN";

/// Languages with fewer training examples than this are considered
/// low-resource.
pub const DEFAULT_RESOURCE_THRESHOLD: usize = 10_000;

/// Script portion of a language label: the suffix after the last underscore
/// (`"eng_Latn"` gives `"Latn"`). Labels without an underscore are returned
/// unchanged.
pub fn label_script(label: &str) -> &str {
    label.rsplit('_').next().unwrap_or(label)
}

/// One labeled document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl Example {
    /// Script used for grouping: the explicit `script` field when present,
    /// otherwise the script suffix of the label.
    pub fn script_code(&self) -> &str {
        match &self.script {
            Some(s) => s,
            None => label_script(&self.label),
        }
    }

    /// Domain used for grouping; absent domains map to [`UNKNOWN_DOMAIN`].
    pub fn domain_code(&self) -> &str {
        self.domain.as_deref().unwrap_or(UNKNOWN_DOMAIN)
    }
}

/// Bidirectional mapping between label strings and dense class ids.
/// Ids are assigned in lexicographic label order and are contiguous from 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelIndex {
    labels: Vec<String>,
    ids: HashMap<String, usize>,
}

impl LabelIndex {
    /// Builds an index over the distinct labels in `labels`, sorted
    /// lexicographically.
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut distinct: Vec<String> = labels.into_iter().map(Into::into).collect();
        distinct.sort();
        distinct.dedup();
        let ids = distinct
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        LabelIndex {
            labels: distinct,
            ids,
        }
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// An in-memory corpus plus the label index derived from it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub label_index: LabelIndex,
}

impl Dataset {
    /// Wraps a list of examples and indexes their labels.
    pub fn from_examples(examples: Vec<Example>) -> Self {
        let label_index = LabelIndex::from_labels(examples.iter().map(|e| e.label.clone()));
        Dataset {
            examples,
            label_index,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Example counts per label, in sorted label order.
    pub fn counts_by_label(&self) -> BTreeMap<&str, usize> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for ex in &self.examples {
            *counts.entry(ex.label.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

/// On-disk corpus encodings accepted by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// One JSON object per line with `text`, `label`, and optional
    /// `script` / `domain` fields.
    Jsonl,
    /// One `__label__<code> <text>` record per line.
    LabeledLines,
}

fn parse_labeled_line(line: &str) -> Option<Example> {
    let rest = line.strip_prefix("__label__")?;
    let (label, text) = rest.split_once(char::is_whitespace)?;
    if label.is_empty() || text.trim().is_empty() {
        return None;
    }
    Some(Example {
        text: text.trim().to_string(),
        label: label.to_string(),
        script: None,
        domain: None,
    })
}

fn parse_jsonl_line(line: &str) -> Option<Example> {
    let ex: Example = serde_json::from_str(line).ok()?;
    if ex.text.trim().is_empty() || ex.label.is_empty() {
        return None;
    }
    Some(ex)
}

/// Reads a corpus from disk. Malformed records are skipped; the second
/// return value reports how many were dropped. A file with no valid records
/// is an error.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<(Dataset, usize)> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut examples = Vec::new();
    let mut skipped = 0usize;
    for line in reader.lines() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            DataFormat::Jsonl => parse_jsonl_line(&line),
            DataFormat::LabeledLines => parse_labeled_line(&line),
        };
        match parsed {
            Some(ex) => examples.push(ex),
            None => skipped += 1,
        }
    }

    if examples.is_empty() {
        return Err(Error::EmptyDataset {
            path: path.to_path_buf(),
        });
    }
    Ok((Dataset::from_examples(examples), skipped))
}

/// Parameters for [`split`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of each language routed to the training side.
    pub train_fraction: f64,
    /// Seed for the per-language shuffles.
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.85,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Splits a corpus per language. Each language contributes
/// `round(train_fraction * n)` examples to the training side, clamped so
/// that languages with at least two examples appear on both sides;
/// single-example languages go entirely to training. Both outputs preserve
/// the original corpus order.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;

    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in dataset.examples.iter().enumerate() {
        by_label.entry(ex.label.as_str()).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_train = vec![false; dataset.len()];
    for (_, mut idxs) in by_label {
        let n = idxs.len();
        if n == 1 {
            in_train[idxs[0]] = true;
            continue;
        }
        idxs.shuffle(&mut rng);
        let want = (spec.train_fraction * n as f64).round() as usize;
        let take = want.clamp(1, n - 1);
        for &i in &idxs[..take] {
            in_train[i] = true;
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, ex) in dataset.examples.iter().enumerate() {
        if in_train[i] {
            train.push(ex.clone());
        } else {
            test.push(ex.clone());
        }
    }
    Ok((Dataset::from_examples(train), Dataset::from_examples(test)))
}

/// Caps every language at `cap` examples, choosing survivors uniformly at
/// random without replacement and preserving their original relative order.
/// Languages at or below the cap pass through untouched, which makes the
/// operation idempotent for a fixed `(cap, seed)`.
pub fn downsample(dataset: &Dataset, cap: usize, seed: u64) -> Result<Dataset> {
    if cap == 0 {
        return Err(Error::Config("downsample cap must be at least 1".into()));
    }

    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in dataset.examples.iter().enumerate() {
        by_label.entry(ex.label.as_str()).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; dataset.len()];
    for (_, mut idxs) in by_label {
        if idxs.len() <= cap {
            for &i in &idxs {
                keep[i] = true;
            }
            continue;
        }
        idxs.shuffle(&mut rng);
        for &i in &idxs[..cap] {
            keep[i] = true;
        }
    }

    let kept = dataset
        .examples
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, ex)| ex.clone())
        .collect();
    Ok(Dataset::from_examples(kept))
}

/// Low/high resource bucket for a language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResourceLevel {
    Low,
    High,
}

/// Buckets every label by example count: strictly below `threshold` is
/// [`ResourceLevel::Low`].
pub fn resource_levels(dataset: &Dataset, threshold: usize) -> BTreeMap<String, ResourceLevel> {
    dataset
        .counts_by_label()
        .into_iter()
        .map(|(label, n)| {
            let level = if n < threshold {
                ResourceLevel::Low
            } else {
                ResourceLevel::High
            };
            (label.to_string(), level)
        })
        .collect()
}
