//! Confusion counts and per-class precision / recall / F1 / IoU.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::raster::GroundTruthMask;

/// Burnt-class confusion counts. Unburnt-class counts follow by swapping
/// roles (see [`ConfusionCounts::unburnt`]).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn unburnt(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

/// Counts labels pairwise; both slices hold `{0, 1}`.
pub fn accumulate_labels(prediction: &[u8], truth: &[u8]) -> Result<ConfusionCounts> {
    if prediction.len() != truth.len() {
        return Err(Error::dims("prediction/truth length", truth.len(), prediction.len()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in prediction.iter().zip(truth) {
        c.record(p == 1, t == 1);
    }
    Ok(c)
}

pub fn accumulate(prediction: &GroundTruthMask, truth: &GroundTruthMask) -> Result<ConfusionCounts> {
    if (prediction.height(), prediction.width()) != (truth.height(), truth.width()) {
        return Err(Error::dims(
            "prediction/truth mask",
            format!("{}x{}", truth.height(), truth.width()),
            format!("{}x{}", prediction.height(), prediction.width()),
        ));
    }
    accumulate_labels(prediction.labels(), truth.labels())
}

/// Metrics of one class. A metric whose denominator is zero is reported as
/// 0 and flagged.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub undefined: UndefinedFlags,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UndefinedFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
    pub iou: bool,
}

impl UndefinedFlags {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1 || self.iou
    }
}

fn ratio(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den == 0.0 {
        *flag = true;
        0.0
    } else {
        num / den
    }
}

impl ClassMetrics {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
        let mut flags = UndefinedFlags::default();
        let precision = ratio(tp, tp + fp, &mut flags.precision);
        let recall = ratio(tp, tp + fn_, &mut flags.recall);
        let f1 = ratio(2.0 * precision * recall, precision + recall, &mut flags.f1);
        let iou = ratio(tp, tp + fp + fn_, &mut flags.iou);
        Self {
            precision,
            recall,
            f1,
            iou,
            undefined: flags,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricReport {
    pub unburnt: ClassMetrics,
    pub burnt: ClassMetrics,
    pub mean_f1: f64,
    pub mean_iou: f64,
}

pub fn compute_metrics(counts: &ConfusionCounts) -> MetricReport {
    let burnt = ClassMetrics::from_counts(counts);
    let unburnt = ClassMetrics::from_counts(&counts.unburnt());
    MetricReport {
        unburnt,
        burnt,
        mean_f1: (unburnt.f1 + burnt.f1) / 2.0,
        mean_iou: (unburnt.iou + burnt.iou) / 2.0,
    }
}

/// Report columns, in table order.
pub const COLUMNS: [&str; 10] = [
    "unburnt_precision",
    "unburnt_recall",
    "unburnt_f1",
    "unburnt_iou",
    "burnt_precision",
    "burnt_recall",
    "burnt_f1",
    "burnt_iou",
    "mean_f1",
    "mean_iou",
];

impl MetricReport {
    pub fn values(&self) -> [f64; 10] {
        let (u, b) = (&self.unburnt, &self.burnt);
        [
            u.precision,
            u.recall,
            u.f1,
            u.iou,
            b.precision,
            b.recall,
            b.f1,
            b.iou,
            self.mean_f1,
            self.mean_iou,
        ]
    }
}

/// Mean and (population) standard deviation of each column over repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub method: String,
    pub family: String,
    pub repeats: usize,
    pub mean: [f64; 10],
    pub std: [f64; 10],
}

impl Summary {
    pub fn from_reports(method: impl Into<String>, family: impl Into<String>, reports: &[MetricReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let mut mean = [0.0; 10];
        let mut std = [0.0; 10];
        for r in reports {
            for (m, v) in mean.iter_mut().zip(r.values()) {
                *m += v / n;
            }
        }
        for r in reports {
            for ((s, v), m) in std.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = s.sqrt();
        }
        Self {
            method: method.into(),
            family: family.into(),
            repeats: reports.len(),
            mean,
            std,
        }
    }

    pub fn tsv_header() -> String {
        let mut h = String::from("method\tfamily\trepeats");
        for c in COLUMNS {
            write!(h, "\t{c}\t{c}_std").unwrap();
        }
        h
    }

    pub fn to_tsv_row(&self) -> String {
        let mut row = format!("{}\t{}\t{}", self.method, self.family, self.repeats);
        for (m, s) in self.mean.iter().zip(&self.std) {
            write!(row, "\t{m:.6}\t{s:.6}").unwrap();
        }
        row
    }

    pub fn from_tsv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 + 2 * COLUMNS.len() {
            return Err(Error::Config(format!("report row has {} fields, expected 23", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{s}` is not a number")))
        };
        let mut mean = [0.0; 10];
        let mut std = [0.0; 10];
        for i in 0..10 {
            mean[i] = num(f[3 + 2 * i])?;
            std[i] = num(f[4 + 2 * i])?;
        }
        Ok(Self {
            method: f[0].to_string(),
            family: f[1].to_string(),
            repeats: f[2]
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{}` is not a repeat count", f[2])))?,
            mean,
            std,
        })
    }
}

pub fn write_tsv(rows: &[Summary]) -> String {
    let mut out = Summary::tsv_header();
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_tsv_row());
        out.push('\n');
    }
    out
}

pub fn read_tsv(text: &str) -> Result<Vec<Summary>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h == Summary::tsv_header() => {}
        Some(_) => return Err(Error::Config("report header does not match".into())),
        None => return Ok(Vec::new()),
    }
    lines.map(Summary::from_tsv_row).collect()
}

fn family_rank(family: &str) -> usize {
    match family {
        "indices" => 0,
        "ml" => 1,
        "dl" => 2,
        _ => 3,
    }
}

/// Aligned plain-text table in percent, `mean (std)`, grouped by family
/// (indices, ml, dl). The best mean F1 and mean IoU are wrapped in `**`.
pub fn render_table(rows: &[Summary]) -> String {
    let mut rows: Vec<&Summary> = rows.iter().collect();
    rows.sort_by(|a, b| {
        family_rank(&a.family)
            .cmp(&family_rank(&b.family))
            .then_with(|| a.method.cmp(&b.method))
    });
    let best = |col: usize| {
        rows.iter()
            .map(|r| r.mean[col])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (best_f1, best_iou) = (best(8), best(9));

    let mut header = vec!["model".to_string(), "family".to_string()];
    header.extend(COLUMNS.iter().map(|c| c.to_string()));
    let mut cells: Vec<Vec<String>> = vec![header];
    for r in &rows {
        let mut line = vec![r.method.clone(), r.family.clone()];
        for col in 0..10 {
            let mut cell = format!("{:.2} ({:.2})", 100.0 * r.mean[col], 100.0 * r.std[col]);
            if (col == 8 && r.mean[col] == best_f1) || (col == 9 && r.mean[col] == best_iou) {
                cell = format!("**{cell}**");
            }
            line.push(cell);
        }
        cells.push(line);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                if c < 2 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(rule));
            out.push('\n');
        }
    }
    out
}
