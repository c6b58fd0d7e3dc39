//! Benchmark reports: one row per (cell, repetition), aggregates per cell,
//! CSV and JSON serialization.
//!
//! Reals are written with 6 significant digits; counts are written exactly.
//! Undefined acceptance rates are empty CSV fields and JSON `null`.

use std::collections::BTreeMap;
use std::path::Path;

use draftreuse_core::{DecodeMetrics, EngineConfig};
use serde_json::{Map, Number, Value};

use crate::{write_atomic, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: String,
    pub steps: usize,
    pub branch: usize,
    pub budget: usize,
    pub resample_budget: usize,
    pub resample_threshold: usize,
    pub resample: bool,
    pub fusion: bool,
    pub draft_noise: f64,
    pub seed: u64,
    pub repetition: usize,
    pub max_new_tokens: usize,
    pub target_forwards: u64,
    pub draft_steps: u64,
    pub tokens_emitted: u64,
    pub mean_accept_length: f64,
    /// Conditional acceptance per speculative step; `None` where nothing was
    /// offered.
    pub rates: Vec<Option<f64>>,
    pub resampled_accepted: u64,
}

const CONFIG_COLUMNS: [&str; 12] = [
    "label",
    "steps",
    "branch",
    "budget",
    "resample_budget",
    "resample_threshold",
    "resample",
    "fusion",
    "draft_noise",
    "seed",
    "repetition",
    "max_new_tokens",
];

const METRIC_HEAD: [&str; 4] = ["targetForwards", "draftSteps", "tokensEmitted", "meanAcceptLength"];

impl Row {
    pub fn new(label: &str, cfg: &EngineConfig, repetition: usize, m: &DecodeMetrics) -> Self {
        let mut rates = m.conditional_acceptance();
        rates.resize(cfg.steps, None);
        Self {
            label: label.to_string(),
            steps: cfg.steps,
            branch: cfg.branch,
            budget: cfg.budget,
            resample_budget: cfg.resample_budget,
            resample_threshold: cfg.resample_threshold,
            resample: cfg.resample,
            fusion: cfg.fusion,
            draft_noise: cfg.draft_noise as f64,
            seed: cfg.seed,
            repetition,
            max_new_tokens: cfg.max_new_tokens,
            target_forwards: m.target_forwards,
            draft_steps: m.draft_steps,
            tokens_emitted: m.tokens_emitted,
            mean_accept_length: m.mean_accept_length(),
            rates,
            resampled_accepted: m.resampled_accepted,
        }
    }

    fn cells(&self, rate_columns: usize) -> Vec<Cell> {
        let mut v = vec![
            Cell::Text(self.label.clone()),
            Cell::Int(self.steps as u64),
            Cell::Int(self.branch as u64),
            Cell::Int(self.budget as u64),
            Cell::Int(self.resample_budget as u64),
            Cell::Int(self.resample_threshold as u64),
            Cell::Bool(self.resample),
            Cell::Bool(self.fusion),
            Cell::Real(Some(self.draft_noise)),
            Cell::Int(self.seed),
            Cell::Int(self.repetition as u64),
            Cell::Int(self.max_new_tokens as u64),
            Cell::Int(self.target_forwards),
            Cell::Int(self.draft_steps),
            Cell::Int(self.tokens_emitted),
            Cell::Real(Some(self.mean_accept_length)),
        ];
        for i in 0..rate_columns {
            v.push(Cell::Real(self.rates.get(i).copied().flatten()));
        }
        v.push(Cell::Int(self.resampled_accepted));
        v
    }

    fn from_fields(get: &dyn Fn(&str) -> Result<String, CliError>, rate_columns: usize) -> Result<Self, CliError> {
        let int = |k: &str| -> Result<u64, CliError> {
            let s = get(k)?;
            s.parse().map_err(|_| parse_err(format!("{k}: {s:?} is not an integer")))
        };
        let real = |k: &str| -> Result<Option<f64>, CliError> {
            let s = get(k)?;
            if s.is_empty() || s == "null" {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| parse_err(format!("{k}: {s:?} is not a number")))
        };
        let flag = |k: &str| -> Result<bool, CliError> {
            match get(k)?.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                s => Err(parse_err(format!("{k}: {s:?} is not a bool"))),
            }
        };
        let req = |k: &str| real(k)?.ok_or_else(|| parse_err(format!("{k} is empty")));
        let steps = int("steps")? as usize;
        let mut rates = Vec::with_capacity(rate_columns);
        for i in 1..=rate_columns {
            rates.push(real(&format!("rate_step{i}"))?);
        }
        Ok(Self {
            label: get("label")?,
            steps,
            branch: int("branch")? as usize,
            budget: int("budget")? as usize,
            resample_budget: int("resample_budget")? as usize,
            resample_threshold: int("resample_threshold")? as usize,
            resample: flag("resample")?,
            fusion: flag("fusion")?,
            draft_noise: req("draft_noise")?,
            seed: int("seed")?,
            repetition: int("repetition")? as usize,
            max_new_tokens: int("max_new_tokens")? as usize,
            target_forwards: int("targetForwards")?,
            draft_steps: int("draftSteps")?,
            tokens_emitted: int("tokensEmitted")?,
            mean_accept_length: req("meanAcceptLength")?,
            rates: {
                rates.resize(steps, None);
                rates
            },
            resampled_accepted: int("resampledAccepted")?,
        })
    }

    /// Config columns that identify the cell (everything but seed and
    /// repetition).
    fn cell_key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
            self.label,
            self.steps,
            self.branch,
            self.budget,
            self.resample_budget,
            self.resample_threshold,
            self.resample,
            self.fusion,
            fmt_sig6(self.draft_noise),
            self.max_new_tokens
        )
    }
}

fn parse_err(reason: String) -> CliError {
    CliError::Io(format!("malformed report: {reason}"))
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Text(String),
    Int(u64),
    Bool(bool),
    Real(Option<f64>),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Real(Some(x)) => fmt_sig6(*x),
            Cell::Real(None) => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(v) => Value::Number((*v).into()),
            Cell::Bool(b) => Value::Bool(*b),
            Cell::Real(Some(x)) => {
                let rounded: f64 = fmt_sig6(*x).parse().expect("formatted number parses");
                Number::from_f64(rounded).map_or(Value::Null, Value::Number)
            }
            Cell::Real(None) => Value::Null,
        }
    }
}

/// `%.6g`: 6 significant digits, trailing zeros trimmed, scientific notation
/// outside `[1e-4, 1e6)`.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        trim(&format!("{:.*}", (5 - exp) as usize, x))
    }
}

/// Mean and sample standard deviation of one metric across repetitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

/// Per-cell statistics over repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    /// First row of the cell; its seed/repetition fields are not meaningful.
    pub cell: Row,
    pub repetitions: usize,
    pub target_forwards: Stat,
    pub draft_steps: Stat,
    pub tokens_emitted: Stat,
    pub mean_accept_length: Stat,
    pub rates: Vec<Option<Stat>>,
    pub resampled_accepted: Stat,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<Row>,
}

impl Report {
    pub fn new(rows: Vec<Row>) -> Self {
        Self { rows }
    }

    /// Rate columns needed to cover the deepest configuration.
    pub fn rate_columns(&self) -> usize {
        self.rows.iter().map(|r| r.steps).max().unwrap_or(0)
    }

    pub fn columns(&self) -> Vec<String> {
        columns(self.rate_columns())
    }

    /// Rows grouped by cell, in order of first appearance.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<&Row>> = BTreeMap::new();
        for row in &self.rows {
            let key = row.cell_key();
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(row);
        }
        order
            .iter()
            .map(|key| {
                let rows = &groups[key];
                let stat = |f: &dyn Fn(&Row) -> f64| {
                    Stat::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("nonempty group")
                };
                let steps = rows[0].steps;
                let rates = (0..steps)
                    .map(|i| {
                        let xs: Vec<f64> = rows.iter().filter_map(|r| r.rates.get(i).copied().flatten()).collect();
                        Stat::of(&xs)
                    })
                    .collect();
                Aggregate {
                    cell: rows[0].clone(),
                    repetitions: rows.len(),
                    target_forwards: stat(&|r| r.target_forwards as f64),
                    draft_steps: stat(&|r| r.draft_steps as f64),
                    tokens_emitted: stat(&|r| r.tokens_emitted as f64),
                    mean_accept_length: stat(&|r| r.mean_accept_length),
                    rates,
                    resampled_accepted: stat(&|r| r.resampled_accepted as f64),
                }
            })
            .collect()
    }

    fn ensure_nonempty(&self) -> Result<(), CliError> {
        if self.rows.is_empty() {
            Err(CliError::Io("refusing to emit a report with no rows".into()))
        } else {
            Ok(())
        }
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        self.ensure_nonempty()?;
        let n = self.rate_columns();
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(columns(n)).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.cells(n).iter().map(Cell::csv)).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self, CliError> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let n = rate_columns_in(&header)?;
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record.map_err(csv_err)?;
            let get = |k: &str| -> Result<String, CliError> {
                let i = header
                    .iter()
                    .position(|h| h == k)
                    .ok_or_else(|| parse_err(format!("missing column {k}")))?;
                Ok(record.get(i).unwrap_or_default().to_string())
            };
            rows.push(Row::from_fields(&get, n)?);
        }
        Ok(Self { rows })
    }

    /// `{"columns": [...], "rows": [{...}], "aggregates": [{...}]}`; row
    /// objects use the CSV column names in CSV order.
    pub fn to_json(&self) -> Result<String, CliError> {
        self.ensure_nonempty()?;
        let n = self.rate_columns();
        let cols = columns(n);
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = cols.iter().cloned().zip(row.cells(n).iter().map(Cell::json)).collect();
                Value::Object(obj)
            })
            .collect();
        let aggregates: Vec<Value> = self.aggregates().iter().map(|a| aggregate_json(a, n)).collect();
        let mut root = Map::new();
        root.insert("columns".into(), Value::Array(cols.into_iter().map(Value::String).collect()));
        root.insert("rows".into(), Value::Array(rows));
        root.insert("aggregates".into(), Value::Array(aggregates));
        let mut text = serde_json::to_string_pretty(&Value::Object(root)).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let root: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let cols: Vec<String> = root["columns"]
            .as_array()
            .ok_or_else(|| parse_err("missing columns".into()))?
            .iter()
            .map(|c| c.as_str().map(str::to_string).ok_or_else(|| parse_err("non-string column".into())))
            .collect::<Result<_, _>>()?;
        let n = rate_columns_in(&cols)?;
        let mut rows = Vec::new();
        for obj in root["rows"].as_array().ok_or_else(|| parse_err("missing rows".into()))? {
            let get = |k: &str| -> Result<String, CliError> {
                match obj.get(k) {
                    Some(Value::String(s)) => Ok(s.clone()),
                    Some(Value::Null) => Ok(String::new()),
                    Some(v) => Ok(v.to_string()),
                    None => Err(parse_err(format!("missing field {k}"))),
                }
            };
            rows.push(Row::from_fields(&get, n)?);
        }
        Ok(Self { rows })
    }

    /// Per-cell aggregates as CSV: config columns without seed/repetition,
    /// then `<metric>_mean`, `<metric>_std` pairs.
    pub fn aggregates_csv(&self) -> Result<String, CliError> {
        self.ensure_nonempty()?;
        let n = self.rate_columns();
        let mut header: Vec<String> = CONFIG_COLUMNS
            .iter()
            .filter(|c| !matches!(**c, "seed" | "repetition"))
            .map(|c| c.to_string())
            .collect();
        header.push("repetitions".into());
        for m in metric_columns(n) {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&header).map_err(csv_err)?;
        for a in self.aggregates() {
            let c = &a.cell;
            let mut rec = vec![
                c.label.clone(),
                c.steps.to_string(),
                c.branch.to_string(),
                c.budget.to_string(),
                c.resample_budget.to_string(),
                c.resample_threshold.to_string(),
                c.resample.to_string(),
                c.fusion.to_string(),
                fmt_sig6(c.draft_noise),
                c.max_new_tokens.to_string(),
                a.repetitions.to_string(),
            ];
            for s in a.metric_stats(n) {
                match s {
                    Some(s) => {
                        rec.push(fmt_sig6(s.mean));
                        rec.push(fmt_sig6(s.std));
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn render(&self, format: Format) -> Result<String, CliError> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    /// Writes the report atomically. CSV output gets a sibling
    /// `<stem>.summary.csv` with the per-cell aggregates.
    pub fn emit(&self, path: &Path, format: Format) -> Result<(), CliError> {
        let text = self.render(format)?;
        write_atomic(path, text.as_bytes())?;
        if format == Format::Csv {
            write_atomic(&summary_path(path), self.aggregates_csv()?.as_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        match Format::from_path(path) {
            Some(Format::Json) => Self::from_json(&text),
            _ => Self::from_csv(&text),
        }
    }
}

impl Aggregate {
    /// Stats in metric-column order.
    fn metric_stats(&self, rate_columns: usize) -> Vec<Option<Stat>> {
        let mut v = vec![
            Some(self.target_forwards),
            Some(self.draft_steps),
            Some(self.tokens_emitted),
            Some(self.mean_accept_length),
        ];
        for i in 0..rate_columns {
            v.push(self.rates.get(i).copied().flatten());
        }
        v.push(Some(self.resampled_accepted));
        v
    }
}

fn aggregate_json(a: &Aggregate, rate_columns: usize) -> Value {
    let mut obj = Map::new();
    let cells = a.cell.cells(rate_columns);
    for (col, cell) in CONFIG_COLUMNS.iter().zip(&cells) {
        if !matches!(*col, "seed" | "repetition") {
            obj.insert(col.to_string(), cell.json());
        }
    }
    obj.insert("repetitions".into(), Value::Number(a.repetitions.into()));
    for (m, s) in metric_columns(rate_columns).into_iter().zip(a.metric_stats(rate_columns)) {
        let (mean, std) = match s {
            Some(s) => (Cell::Real(Some(s.mean)).json(), Cell::Real(Some(s.std)).json()),
            None => (Value::Null, Value::Null),
        };
        obj.insert(format!("{m}_mean"), mean);
        obj.insert(format!("{m}_std"), std);
    }
    Value::Object(obj)
}

pub fn summary_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.summary.csv"))
}

fn metric_columns(rate_columns: usize) -> Vec<String> {
    let mut v: Vec<String> = METRIC_HEAD.iter().map(|s| s.to_string()).collect();
    v.extend((1..=rate_columns).map(|i| format!("rate_step{i}")));
    v.push("resampledAccepted".into());
    v
}

/// Full column list for a report with `rate_columns` step rates.
pub fn columns(rate_columns: usize) -> Vec<String> {
    let mut v: Vec<String> = CONFIG_COLUMNS.iter().map(|s| s.to_string()).collect();
    v.extend(metric_columns(rate_columns));
    v
}

fn rate_columns_in(header: &[String]) -> Result<usize, CliError> {
    let n = header.iter().filter(|h| h.starts_with("rate_step")).count();
    if header != columns(n).as_slice() {
        return Err(parse_err(format!("unexpected header {header:?}")));
    }
    Ok(n)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(format!("csv: {e}"))
}
