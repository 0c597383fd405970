//! Per-round metrics sinks: CSV, JSON lines, and a long-format CSV for
//! plotting.
//!
//! Both record formats carry the same fields in the same order (see
//! [`FIELDS`]). CSV files start with `#` comment lines echoing the effective
//! config; JSONL files start with one `{"header": ...}` object. Parsers skip
//! both.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sim::RoundMetrics;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricsFormat {
    #[default]
    Csv,
    Jsonl,
}

impl MetricsFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MetricsFormat::Csv => "csv",
            MetricsFormat::Jsonl => "jsonl",
        }
    }
}

impl fmt::Display for MetricsFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for MetricsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(MetricsFormat::Csv),
            "jsonl" => Ok(MetricsFormat::Jsonl),
            _ => Err(Error::config(format!("unknown metrics format {s:?} (expected csv or jsonl)"))),
        }
    }
}

/// Column order of every metrics file.
pub const FIELDS: [&str; 16] = [
    "strategy",
    "config_hash",
    "round",
    "global_loss",
    "eval_loss",
    "eval_accuracy",
    "i_t",
    "eps_t",
    "t_download_s",
    "t_compute_s",
    "t_upload_s",
    "t_round_s",
    "cumulative_time_s",
    "atoms_up",
    "bytes_up",
    "bytes_down",
];

/// One row: round metrics plus the strategy label and config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub strategy: String,
    pub config_hash: String,
    pub round: u64,
    pub global_loss: f64,
    pub eval_loss: f64,
    pub eval_accuracy: f64,
    pub i_t: u32,
    pub eps_t: f64,
    pub t_download_s: f64,
    pub t_compute_s: f64,
    pub t_upload_s: f64,
    pub t_round_s: f64,
    pub cumulative_time_s: f64,
    pub atoms_up: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

impl MetricsRecord {
    pub fn new(strategy: &str, config_hash: &str, m: &RoundMetrics) -> Self {
        Self {
            strategy: strategy.to_string(),
            config_hash: config_hash.to_string(),
            round: m.round,
            global_loss: m.global_loss,
            eval_loss: m.eval_loss,
            eval_accuracy: m.eval_accuracy,
            i_t: m.i_t,
            eps_t: m.eps_t,
            t_download_s: m.t_download_s,
            t_compute_s: m.t_compute_s,
            t_upload_s: m.t_upload_s,
            t_round_s: m.t_round_s,
            cumulative_time_s: m.cumulative_time_s,
            atoms_up: m.atoms_up,
            bytes_up: m.bytes_up,
            bytes_down: m.bytes_down,
        }
    }

    pub fn round_metrics(&self) -> RoundMetrics {
        RoundMetrics {
            round: self.round,
            global_loss: self.global_loss,
            eval_loss: self.eval_loss,
            eval_accuracy: self.eval_accuracy,
            i_t: self.i_t,
            eps_t: self.eps_t,
            t_download_s: self.t_download_s,
            t_compute_s: self.t_compute_s,
            t_upload_s: self.t_upload_s,
            t_round_s: self.t_round_s,
            cumulative_time_s: self.cumulative_time_s,
            atoms_up: self.atoms_up,
            bytes_up: self.bytes_up,
            bytes_down: self.bytes_down,
        }
    }
}

/// Provenance written at the top of a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsHeader {
    pub strategy: String,
    pub config_hash: String,
    /// Effective config as TOML.
    pub config: String,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Metrics(format!("{other:?}")),
    }
}

enum Sink<W: Write> {
    Csv(Box<csv::Writer<W>>),
    Jsonl(W),
}

/// Append-only writer that flushes after every record.
pub struct MetricsWriter<W: Write> {
    sink: Sink<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, format: MetricsFormat, header: &MetricsHeader) -> Result<Self> {
        let sink = match format {
            MetricsFormat::Csv => {
                writeln!(out, "# strategy: {}", header.strategy)?;
                writeln!(out, "# config_hash: {}", header.config_hash)?;
                for line in header.config.lines() {
                    writeln!(out, "# {line}")?;
                }
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
                w.write_record(FIELDS).map_err(csv_err)?;
                w.flush()?;
                Sink::Csv(Box::new(w))
            }
            MetricsFormat::Jsonl => {
                serde_json::to_writer(&mut out, &serde_json::json!({ "header": header })).map_err(|e| Error::Metrics(e.to_string()))?;
                out.write_all(b"\n")?;
                out.flush()?;
                Sink::Jsonl(out)
            }
        };
        Ok(Self { sink })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        match &mut self.sink {
            Sink::Csv(w) => {
                w.serialize(record).map_err(csv_err)?;
                w.flush()?;
            }
            Sink::Jsonl(w) => {
                serde_json::to_writer(&mut *w, record).map_err(|e| Error::Metrics(e.to_string()))?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
        }
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        match self.sink {
            Sink::Csv(w) => w.into_inner().map_err(|e| Error::Io(e.into_error())),
            Sink::Jsonl(w) => Ok(w),
        }
    }
}

/// Write a whole stream at once.
pub fn write_metrics<W: Write>(records: &[MetricsRecord], out: W, format: MetricsFormat, header: &MetricsHeader) -> Result<W> {
    let mut w = MetricsWriter::new(out, format, header)?;
    for r in records {
        w.write(r)?;
    }
    w.into_inner()
}

/// Parse a metrics file, skipping the config preamble.
pub fn parse_metrics(text: &str, format: MetricsFormat) -> Result<Vec<MetricsRecord>> {
    match format {
        MetricsFormat::Csv => {
            let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
            let headers = r.headers().map_err(csv_err)?.clone();
            if headers.iter().ne(FIELDS) {
                return Err(Error::Metrics(format!("unexpected columns {headers:?}")));
            }
            r.deserialize().map(|rec| rec.map_err(csv_err)).collect()
        }
        MetricsFormat::Jsonl => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| match serde_json::from_str::<serde_json::Value>(l) {
                Ok(v) if v.get("header").is_some() => None,
                Ok(v) => Some(serde_json::from_value(v).map_err(|e| Error::Metrics(e.to_string()))),
                Err(e) => Some(Err(Error::Metrics(e.to_string()))),
            })
            .collect(),
    }
}

/// Plot-ready rows `time_s,metric,value,strategy,round` for the loss,
/// accuracy and schedule of every run.
pub fn write_long_format<W: Write>(out: W, runs: &[(String, Vec<RoundMetrics>)]) -> Result<W> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "metric", "value", "strategy", "round"]).map_err(csv_err)?;
    for (label, metrics) in runs {
        for m in metrics {
            let values = [
                ("global_loss", m.global_loss),
                ("eval_loss", m.eval_loss),
                ("eval_accuracy", m.eval_accuracy),
                ("i_t", m.i_t as f64),
                ("eps_t", m.eps_t),
            ];
            for (name, v) in values {
                w.serialize((m.cumulative_time_s, name, v, label, m.round)).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: u64) -> MetricsRecord {
        MetricsRecord {
            strategy: "fixed-eps-6".into(),
            config_hash: "ab12".into(),
            round,
            global_loss: std::f64::consts::LN_10 / round as f64,
            eval_loss: 0.1 + 1.0 / 3.0,
            eval_accuracy: 0.8125,
            i_t: 7,
            eps_t: 5.039684199579493,
            t_download_s: 0.0512,
            t_compute_s: 7e-4,
            t_upload_s: 1e-300,
            t_round_s: 0.0519000001,
            cumulative_time_s: 0.0519000001 * round as f64,
            atoms_up: 190,
            bytes_up: 1520,
            bytes_down: 20480,
        }
    }

    fn header() -> MetricsHeader {
        MetricsHeader { strategy: "fixed-eps:6".into(), config_hash: "ab12".into(), config: "seed = 1\n[time]\nuplink_bps = 1.0".into() }
    }

    #[test]
    fn empty_stream_is_header_only() {
        let out = write_metrics(&[], Vec::new(), MetricsFormat::Csv, &header()).unwrap();
        let text = String::from_utf8(out).unwrap();
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body, vec![FIELDS.join(",")]);
        assert!(text.contains("# [time]"));
        assert!(parse_metrics(&text, MetricsFormat::Csv).unwrap().is_empty());
    }

    #[test]
    fn both_formats_round_trip_exactly() {
        let recs: Vec<MetricsRecord> = (1..=5).map(record).collect();
        for format in [MetricsFormat::Csv, MetricsFormat::Jsonl] {
            let out = write_metrics(&recs, Vec::new(), format, &header()).unwrap();
            let back = parse_metrics(std::str::from_utf8(&out).unwrap(), format).unwrap();
            assert_eq!(back, recs, "{format}");
        }
    }

    #[test]
    fn serialized_field_order_matches_fields() {
        let out = write_metrics(&[record(1)], Vec::new(), MetricsFormat::Jsonl, &header()).unwrap();
        let line = std::str::from_utf8(&out).unwrap().lines().nth(1).unwrap().to_string();
        let keys: Vec<usize> = FIELDS.iter().map(|f| line.find(&format!("\"{f}\"")).unwrap()).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn long_format_rows() {
        let runs = vec![("eafo".to_string(), vec![record(1).round_metrics(), record(2).round_metrics()])];
        let out = write_long_format(Vec::new(), &runs).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 5);
        assert!(text.starts_with("time_s,metric,value,strategy,round\n"));
    }

    #[test]
    fn format_strings() {
        assert_eq!("jsonl".parse::<MetricsFormat>().unwrap(), MetricsFormat::Jsonl);
        assert!("xml".parse::<MetricsFormat>().is_err());
    }
}
