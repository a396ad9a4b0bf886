//! Evaluation: confusion counting, one-vs-rest precision/recall/F1 and
//! false-positive rate with macro averages, prediction agreement between
//! two models, per-group metric deltas, and a misclassification digest.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::corpus::label_script;
use crate::error::{Error, Result};

/// Gold-by-predicted counts over a label pair list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfusionMatrix {
    counts: BTreeMap<(String, String), usize>,
    gold_totals: BTreeMap<String, usize>,
    pred_totals: BTreeMap<String, usize>,
    total: usize,
}

impl ConfusionMatrix {
    pub fn from_pairs<'a, I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut cm = ConfusionMatrix::default();
        for (gold, pred) in pairs {
            *cm.counts
                .entry((gold.to_string(), pred.to_string()))
                .or_insert(0) += 1;
            *cm.gold_totals.entry(gold.to_string()).or_insert(0) += 1;
            *cm.pred_totals.entry(pred.to_string()).or_insert(0) += 1;
            cm.total += 1;
        }
        cm
    }

    pub fn count(&self, gold: &str, pred: &str) -> usize {
        self.counts
            .get(&(gold.to_string(), pred.to_string()))
            .copied()
            .unwrap_or(0)
    }

    /// Labels that appear as gold, sorted.
    pub fn gold_labels(&self) -> Vec<&str> {
        self.gold_totals.keys().map(String::as_str).collect()
    }

    pub fn gold_total(&self, label: &str) -> usize {
        self.gold_totals.get(label).copied().unwrap_or(0)
    }

    pub fn pred_total(&self, label: &str) -> usize {
        self.pred_totals.get(label).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Non-zero cells as (gold, predicted, count), sorted.
    pub fn cells(&self) -> impl Iterator<Item = (&str, &str, usize)> {
        self.counts
            .iter()
            .map(|((g, p), &c)| (g.as_str(), p.as_str(), c))
    }
}

/// One-vs-rest counts and rates for a single gold language.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LanguageMetrics {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False positives over all documents of other languages.
    pub fpr: f64,
    /// Gold documents of this language.
    pub support: usize,
}

/// Per-language metrics plus unweighted macro averages over gold languages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub per_language: BTreeMap<String, LanguageMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_fpr: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest metrics for every gold language. Ratios with zero
/// denominators are defined as zero; macro averages weight every gold
/// language equally regardless of support.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    if cm.total() == 0 {
        return Err(Error::Empty("confusion matrix".into()));
    }

    let mut per_language = BTreeMap::new();
    let (mut sp, mut sr, mut sf, mut sfpr) = (0.0, 0.0, 0.0, 0.0);
    for label in cm.gold_labels() {
        let tp = cm.count(label, label);
        let support = cm.gold_total(label);
        let false_neg = support - tp;
        let false_pos = cm.pred_total(label) - tp;
        let true_neg = cm.total() - tp - false_neg - false_pos;

        let precision = ratio(tp, tp + false_pos);
        let recall = ratio(tp, tp + false_neg);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let fpr = ratio(false_pos, false_pos + true_neg);

        sp += precision;
        sr += recall;
        sf += f1;
        sfpr += fpr;
        per_language.insert(
            label.to_string(),
            LanguageMetrics {
                true_pos: tp,
                false_pos,
                false_neg,
                true_neg,
                precision,
                recall,
                f1,
                fpr,
                support,
            },
        );
    }

    let n = per_language.len() as f64;
    Ok(MetricReport {
        per_language,
        macro_precision: sp / n,
        macro_recall: sr / n,
        macro_f1: sf / n,
        macro_fpr: sfpr / n,
    })
}

/// How often two prediction lists agree. `micro` is the fraction of
/// agreeing documents overall; `macro` averages the per-group agreement
/// ratios, where `langs[i]` names document `i`'s group.
pub fn agreement(preds_a: &[String], preds_b: &[String], langs: &[String]) -> Result<(f64, f64)> {
    if preds_a.len() != preds_b.len() || preds_a.len() != langs.len() {
        return Err(Error::LengthMismatch {
            what: "prediction lists vs language list".into(),
            left: preds_a.len().min(preds_b.len()),
            right: langs.len(),
        });
    }
    if preds_a.is_empty() {
        return Err(Error::Empty("agreement input".into()));
    }

    let mut matches = 0usize;
    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for i in 0..preds_a.len() {
        let hit = preds_a[i] == preds_b[i];
        if hit {
            matches += 1;
        }
        let entry = groups.entry(langs[i].as_str()).or_insert((0, 0));
        entry.1 += 1;
        if hit {
            entry.0 += 1;
        }
    }

    let micro = matches as f64 / preds_a.len() as f64;
    let macro_avg = groups
        .values()
        .map(|&(m, t)| m as f64 / t as f64)
        .sum::<f64>()
        / groups.len() as f64;
    Ok((macro_avg, micro))
}

/// Mean baseline F1 and mean F1 delta for one group of languages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupDelta {
    pub group: String,
    pub languages: usize,
    pub base_f1: f64,
    pub delta_f1: f64,
}

/// Group used for languages missing from the grouping map.
pub const UNGROUPED: &str = "UNGROUPED";

/// Compares two metric reports over the same gold languages, aggregating
/// per-language F1 means and deltas (`other - base`) by group.
pub fn stratified_delta(
    base: &MetricReport,
    other: &MetricReport,
    groups: &BTreeMap<String, String>,
) -> Result<Vec<GroupDelta>> {
    let base_langs: Vec<&String> = base.per_language.keys().collect();
    let other_langs: Vec<&String> = other.per_language.keys().collect();
    if base_langs != other_langs {
        return Err(Error::GoldSetMismatch);
    }

    let mut agg: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    for (lang, base_m) in &base.per_language {
        let other_m = &other.per_language[lang];
        let group = groups.get(lang).map(String::as_str).unwrap_or(UNGROUPED);
        let entry = agg.entry(group).or_insert((0, 0.0, 0.0));
        entry.0 += 1;
        entry.1 += base_m.f1;
        entry.2 += other_m.f1 - base_m.f1;
    }

    Ok(agg
        .into_iter()
        .map(|(group, (n, base_sum, delta_sum))| GroupDelta {
            group: group.to_string(),
            languages: n,
            base_f1: base_sum / n as f64,
            delta_f1: delta_sum / n as f64,
        })
        .collect())
}

/// Where one struggling language's errors go.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MisclassEntry {
    pub language: String,
    /// Documents of this language predicted as something else.
    pub errors: usize,
    /// Distinct wrong labels received.
    pub distinct_targets: usize,
    /// Most frequent wrong label (ties break lexicographically).
    pub top_target: String,
    /// Share of the errors going to `top_target`.
    pub top_share: f64,
    /// Share of the errors whose predicted label has the same script.
    pub same_script_share: f64,
}

/// Digest of error destinations for every gold language with F1 strictly
/// below `f1_threshold` and at least one error.
pub fn misclassification_report(
    cm: &ConfusionMatrix,
    f1_threshold: f64,
) -> Result<Vec<MisclassEntry>> {
    let report = metrics(cm)?;
    let mut out = Vec::new();
    for (lang, m) in &report.per_language {
        if m.f1 >= f1_threshold || m.false_neg == 0 {
            continue;
        }
        let mut wrong: Vec<(&str, usize)> = cm
            .cells()
            .filter(|(g, p, _)| g == lang && p != g)
            .map(|(_, p, c)| (p, c))
            .collect();
        wrong.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let errors: usize = wrong.iter().map(|(_, c)| c).sum();
        let same_script: usize = wrong
            .iter()
            .filter(|(p, _)| label_script(p) == label_script(lang))
            .map(|(_, c)| c)
            .sum();
        out.push(MisclassEntry {
            language: lang.clone(),
            errors,
            distinct_targets: wrong.len(),
            top_target: wrong[0].0.to_string(),
            top_share: wrong[0].1 as f64 / errors as f64,
            same_script_share: same_script as f64 / errors as f64,
        });
    }
    Ok(out)
}

/// Writes a metric report as TSV: one row per language plus a macro row.
pub fn write_metric_report_tsv<W: Write>(w: &mut W, report: &MetricReport) -> std::io::Result<()> {
    writeln!(w, "label\tprecision\trecall\tf1\tfpr\tsupport")?;
    for (lang, m) in &report.per_language {
        writeln!(
            w,
            "{lang}\t{}\t{}\t{}\t{}\t{}",
            m.precision, m.recall, m.f1, m.fpr, m.support
        )?;
    }
    writeln!(
        w,
        "MACRO\t{}\t{}\t{}\t{}\t{}",
        report.macro_precision,
        report.macro_recall,
        report.macro_f1,
        report.macro_fpr,
        report.per_language.len()
    )?;
    Ok(())
}

/// Writes a metric report as pretty-printed JSON.
pub fn write_metric_report_json<W: Write>(w: &mut W, report: &MetricReport) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io {
        path: "<report>".into(),
        source: e,
    };
    serde_json::to_writer_pretty(&mut *w, report)
        .map_err(|e| io_err(std::io::Error::other(e)))?;
    writeln!(w).map_err(io_err)
}
