//! Parsing model text into answers and scoring answers against ground truth.
//!
//! Binary parsing looks only at the first sentence and applies, in order:
//!
//! 1. A leading `yes`/`yeah`/`yep` or `no`/`nope` token decides the answer.
//! 2. Otherwise, a `yes` token with no negation token means yes, and a
//!    negation token (`no`, `not`, `none`, `nothing`, `never`, `cannot`,
//!    `neither`, `nor`, any `n't` contraction) with no `yes` token means no.
//! 3. Anything else, including both or neither, is unparseable.
//!
//! Unparseable decisions are never counted as false positives. One whose
//! truth is "present" counts as a false negative; one whose truth is "absent"
//! is excluded from the true negatives and reported separately.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::ModelResponse;
use crate::prompt::TemplateKind;
use crate::qa::{Probe, QAItem, Truth, YesNo};
use crate::search::Strategy;
use crate::text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Ok,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub qa_id: String,
    pub kind: TemplateKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_value: Option<YesNo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<Vec<String>>,
    pub parse_status: ParseStatus,
}

fn first_sentence(raw: &str) -> Vec<String> {
    for sentence in raw.split(['.', '!', '?', ';', '\n']) {
        let tokens: Vec<String> = sentence
            .replace(['\u{2019}', '\u{2018}'], "'")
            .split(|c: char| !(c.is_alphanumeric() || c == '\''))
            .map(|t| t.trim_matches('\'').to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        if !tokens.is_empty() {
            return tokens;
        }
    }
    Vec::new()
}

const YES: &[&str] = &["yes", "yeah", "yep"];
const LEADING_NO: &[&str] = &["no", "nope"];
const NEGATIONS: &[&str] = &[
    "no", "not", "none", "nothing", "never", "cannot", "neither", "nor", "nope",
];

pub fn parse_binary(raw_text: &str) -> Option<YesNo> {
    let tokens = first_sentence(raw_text);
    let first = tokens.first()?;
    if YES.contains(&first.as_str()) {
        return Some(YesNo::Yes);
    }
    if LEADING_NO.contains(&first.as_str()) {
        return Some(YesNo::No);
    }
    let has_yes = tokens.iter().any(|t| YES.contains(&t.as_str()));
    let has_neg = tokens
        .iter()
        .any(|t| NEGATIONS.contains(&t.as_str()) || t.ends_with("n't"));
    match (has_yes, has_neg) {
        (true, false) => Some(YesNo::Yes),
        (false, true) => Some(YesNo::No),
        _ => None,
    }
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

/// Candidates mentioned as whole words, matched longest first so a span
/// claimed by "red car" is not also counted as "car". Returns `None` for
/// empty text; the selection keeps `candidate_order`.
pub fn parse_multi_option(raw_text: &str, candidate_order: &[String]) -> Option<Vec<String>> {
    let text = normalize(raw_text);
    if text.is_empty() {
        return None;
    }
    let mut by_len: Vec<(usize, String)> = candidate_order
        .iter()
        .enumerate()
        .map(|(i, c)| (i, normalize(c)))
        .filter(|(_, c)| !c.is_empty())
        .collect();
    by_len.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    let mut claimed = vec![false; text.len()];
    let mut selected = vec![false; candidate_order.len()];
    for (i, cand) in &by_len {
        let mut spans = Vec::new();
        for (start, m) in text.match_indices(cand.as_str()) {
            let end = start + m.len();
            let before = text[..start].chars().next_back();
            let after = text[end..].chars().next();
            if is_word_char(before) || is_word_char(after) {
                continue;
            }
            if claimed[start..end].iter().any(|c| *c) {
                continue;
            }
            spans.push((start, end));
        }
        if !spans.is_empty() {
            selected[*i] = true;
            for (s, e) in spans {
                claimed[s..e].iter_mut().for_each(|c| *c = true);
            }
        }
    }
    Some(
        candidate_order
            .iter()
            .zip(selected)
            .filter(|(_, s)| *s)
            .map(|(c, _)| c.clone())
            .collect(),
    )
}

/// Parses a response for its item. Failed requests are unparseable.
pub fn parse_answer(item: &QAItem, response: &ModelResponse) -> ParsedAnswer {
    let mut out = ParsedAnswer {
        qa_id: item.qa_id.clone(),
        kind: item.template_kind,
        binary_value: None,
        selected: None,
        parse_status: ParseStatus::Unparseable,
    };
    if response.failed {
        return out;
    }
    match item.template_kind {
        TemplateKind::Binary => {
            out.binary_value = parse_binary(&response.raw_text);
            if out.binary_value.is_some() {
                out.parse_status = ParseStatus::Ok;
            }
        }
        TemplateKind::MultiOption => {
            out.selected = parse_multi_option(&response.raw_text, &item.candidate_order());
            if out.selected.is_some() {
                out.parse_status = ParseStatus::Ok;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Unparseable decisions whose truth was "absent"; in no other bucket.
    pub unparseable: u64,
    /// Unparseable decisions whose truth was "present"; already inside `fn_`.
    pub unparseable_in_fn: u64,
}

impl Counts {
    pub fn decisions(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_ + self.unparseable
    }

    pub fn total_unparseable(&self) -> u64 {
        self.unparseable + self.unparseable_in_fn
    }

    fn record(&mut self, truth: bool, answer: Option<bool>) {
        match (truth, answer) {
            (true, Some(true)) => self.tp += 1,
            (true, Some(false)) => self.fn_ += 1,
            (true, None) => {
                self.fn_ += 1;
                self.unparseable_in_fn += 1;
            }
            (false, Some(true)) => self.fp += 1,
            (false, Some(false)) => self.tn += 1,
            (false, None) => self.unparseable += 1,
        }
    }
}

/// A ratio that reports 0 with `defined = false` on a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub defined: bool,
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Metric {
        if den == 0 {
            Metric {
                value: 0.0,
                defined: false,
            }
        } else {
            Metric {
                value: num as f64 / den as f64,
                defined: true,
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus_hash: String,
    #[serde(default)]
    pub bundle_source_tag: Option<String>,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub strategy: Strategy,
    pub template_kind: TemplateKind,
    /// Registry name; tells apart templates of the same kind.
    #[serde(default)]
    pub template_name: String,
    pub counts: Counts,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
    pub provenance: Provenance,
}

impl EvalReport {
    pub fn from_counts(
        model_name: &str,
        strategy: Strategy,
        template_kind: TemplateKind,
        counts: Counts,
        provenance: Provenance,
    ) -> Self {
        let precision = Metric::ratio(counts.tp, counts.tp + counts.fp);
        let recall = Metric::ratio(counts.tp, counts.tp + counts.fn_);
        let sum = precision.value + recall.value;
        let f1 = if precision.defined && recall.defined && sum > 0.0 {
            Metric {
                value: 2.0 * precision.value * recall.value / sum,
                defined: true,
            }
        } else {
            Metric {
                value: 0.0,
                defined: false,
            }
        };
        EvalReport {
            model_name: model_name.to_string(),
            strategy,
            template_kind,
            template_name: template_kind.as_str().to_string(),
            counts,
            precision,
            recall,
            f1,
            provenance,
        }
    }
}

/// Confusion counts per (strategy, template). Binary items contribute
/// one decision; multi-option items one decision per listed candidate. Items
/// with no answer count as unparseable.
pub fn score_run(
    model_name: &str,
    items: &[QAItem],
    answers: &[ParsedAnswer],
    provenance: &Provenance,
) -> Result<Vec<EvalReport>> {
    let known: HashSet<&str> = items.iter().map(|i| i.qa_id.as_str()).collect();
    let mut by_id: HashMap<&str, &ParsedAnswer> = HashMap::new();
    for a in answers {
        if !known.contains(a.qa_id.as_str()) {
            return Err(Error::Validation(format!(
                "answer for unknown qa_id {}",
                a.qa_id
            )));
        }
        by_id.insert(a.qa_id.as_str(), a);
    }
    let mut groups: BTreeMap<(Strategy, TemplateKind, &str), Counts> = BTreeMap::new();
    for item in items {
        let counts = groups
            .entry((
                item.strategy,
                item.template_kind,
                item.template_name.as_str(),
            ))
            .or_default();
        let answer = by_id
            .get(item.qa_id.as_str())
            .filter(|a| a.parse_status == ParseStatus::Ok);
        match (&item.probe, &item.truth) {
            (Probe::Single(_), Truth::Binary(t)) => {
                let said = answer.and_then(|a| a.binary_value).map(|v| v == YesNo::Yes);
                counts.record(*t == YesNo::Yes, said);
            }
            (Probe::Options(opts), Truth::Present(present)) => {
                let present: HashSet<&str> = present.iter().map(String::as_str).collect();
                let selected: Option<HashSet<&str>> = answer
                    .and_then(|a| a.selected.as_ref())
                    .map(|s| s.iter().map(String::as_str).collect());
                for o in opts {
                    let said = selected.as_ref().map(|s| s.contains(o.text.as_str()));
                    counts.record(present.contains(o.text.as_str()), said);
                }
            }
            _ => {
                return Err(Error::Validation(format!(
                    "qa item {} has mismatched probe and truth",
                    item.qa_id
                )))
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|((strategy, kind, name), counts)| EvalReport {
            template_name: name.to_string(),
            ..EvalReport::from_counts(model_name, strategy, kind, counts, provenance.clone())
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Csv,
    Markdown,
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "model",
    "strategy",
    "template",
    "precision",
    "recall",
    "f1",
    "tp",
    "fp",
    "tn",
    "fn",
    "unparseable",
];

const UNDEFINED_NOTE: &str = "* undefined (zero denominator), reported as 0";

fn pct(m: Metric) -> String {
    let mut s = format!("{:.2}", m.value * 100.0);
    if !m.defined {
        s.push('*');
    }
    s
}

fn row(r: &EvalReport) -> [String; 11] {
    [
        r.model_name.clone(),
        r.strategy.to_string(),
        if r.template_name.is_empty() {
            r.template_kind.to_string()
        } else {
            r.template_name.clone()
        },
        pct(r.precision),
        pct(r.recall),
        pct(r.f1),
        r.counts.tp.to_string(),
        r.counts.fp.to_string(),
        r.counts.tn.to_string(),
        r.counts.fn_.to_string(),
        r.counts.total_unparseable().to_string(),
    ]
}

fn footer(reports: &[EvalReport]) -> Vec<String> {
    let mut lines = Vec::new();
    let mut seen = HashSet::new();
    for r in reports {
        let p = &r.provenance;
        let line = format!(
            "corpus={} bundle={} seed={} config={}",
            p.corpus_hash,
            p.bundle_source_tag.as_deref().unwrap_or("-"),
            p.seed,
            p.config_digest
        );
        if seen.insert(line.clone()) {
            lines.push(line);
        }
    }
    if reports
        .iter()
        .any(|r| !(r.precision.defined && r.recall.defined && r.f1.defined))
    {
        lines.push(UNDEFINED_NOTE.to_string());
    }
    lines
}

/// Precision, recall and F1 as percentages with two decimals. CSV carries no
/// footer so it stays loadable as a plain table.
pub fn render_report(reports: &[EvalReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("reports"));
    }
    let rows: Vec<[String; 11]> = reports.iter().map(row).collect();
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS).expect("in-memory write");
            for r in &rows {
                w.write_record(r).expect("in-memory write");
            }
            out = String::from_utf8(w.into_inner().expect("flush")).expect("utf8");
        }
        ReportFormat::Markdown => {
            let titles = REPORT_COLUMNS.map(title);
            let _ = writeln!(out, "| {} |", titles.join(" | "));
            let _ = writeln!(
                out,
                "|{}|",
                titles
                    .iter()
                    .enumerate()
                    .map(|(i, _)| if i < 3 { "---" } else { "---:" })
                    .collect::<Vec<_>>()
                    .join("|")
            );
            for r in &rows {
                let cells: Vec<String> = r.iter().map(|c| c.replace('|', "\\|")).collect();
                let _ = writeln!(out, "| {} |", cells.join(" | "));
            }
            out.push('\n');
            for line in footer(reports) {
                let _ = writeln!(out, "_{line}_  ");
            }
        }
        ReportFormat::Table => {
            let titles = REPORT_COLUMNS.map(title);
            let mut widths: Vec<usize> = titles.iter().map(|t| t.chars().count()).collect();
            for r in &rows {
                for (w, c) in widths.iter_mut().zip(r) {
                    *w = (*w).max(c.chars().count());
                }
            }
            let fmt_row = |cells: &[String]| {
                cells
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (c, w))| {
                        if i < 3 {
                            format!("{c:<w$}")
                        } else {
                            format!("{c:>w$}")
                        }
                    })
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            };
            let titles: Vec<String> = titles.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(out, "{}", fmt_row(&titles));
            let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
            for r in &rows {
                let _ = writeln!(out, "{}", fmt_row(r));
            }
            out.push('\n');
            for line in footer(reports) {
                let _ = writeln!(out, "{line}");
            }
        }
    }
    Ok(out)
}

fn title(col: &str) -> &'static str {
    match col {
        "model" => "Model",
        "strategy" => "Strategy",
        "template" => "Template",
        "precision" => "Precision",
        "recall" => "Recall",
        "f1" => "F1",
        "tp" => "TP",
        "fp" => "FP",
        "tn" => "TN",
        "fn" => "FN",
        _ => "Unparseable",
    }
}

/// One parsed row of a Markdown report; metrics in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub strategy: String,
    pub template: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Reads back the table rows written by [`render_report`] in Markdown.
pub fn parse_markdown_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    let table: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| l.trim_start().starts_with('|'))
        .collect();
    for (n, (lineno, line)) in table.iter().enumerate() {
        if n < 2 {
            continue;
        }
        let bad = |m: String| Error::Parse {
            what: "markdown report".into(),
            line: lineno + 1,
            column: 0,
            message: m,
        };
        let inner = line.trim().trim_start_matches('|').trim_end_matches('|');
        let cells = split_cells(inner);
        if cells.len() != REPORT_COLUMNS.len() {
            return Err(bad(format!(
                "{} cells, expected {}",
                cells.len(),
                REPORT_COLUMNS.len()
            )));
        }
        let num = |s: &str| {
            s.trim_end_matches('*')
                .parse::<f64>()
                .map_err(|e| bad(format!("'{s}': {e}")))
        };
        rows.push(ReportRow {
            model: cells[0].clone(),
            strategy: cells[1].clone(),
            template: cells[2].clone(),
            precision: num(&cells[3])?,
            recall: num(&cells[4])?,
            f1: num(&cells[5])?,
        });
    }
    Ok(rows)
}

fn split_cells(inner: &str) -> Vec<String> {
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut chars = inner.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' if chars.peek() == Some(&'|') => {
                cur.push('|');
                chars.next();
            }
            '|' => cells.push(std::mem::take(&mut cur).trim().to_string()),
            _ => cur.push(c),
        }
    }
    cells.push(cur.trim().to_string());
    cells
}
