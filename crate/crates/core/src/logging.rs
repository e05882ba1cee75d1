//! CSV run logs, run summaries and parameter snapshots.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LayerParams, Model, ParamSet};
use crate::trainer::{IterationRecord, RunLog};

pub const CSV_HEADER: [&str; 10] = [
    "iter",
    "epsilon",
    "j_trials",
    "ls_steps_cum",
    "mb_loss",
    "full_loss",
    "train_acc",
    "test_acc",
    "sparsity_pct",
    "wall_s",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// CSV fields of one record, in header order. Floats use the shortest
/// representation that parses back to the same value.
pub fn csv_fields(record: &IterationRecord) -> [String; 10] {
    [
        record.iter.to_string(),
        record.epsilon.to_string(),
        record.trials.to_string(),
        record.ls_steps_cum.to_string(),
        record.mb_loss_after.to_string(),
        opt(record.full_loss),
        opt(record.train_acc),
        opt(record.test_acc),
        record.sparsity_pct.to_string(),
        record.wall_s.to_string(),
    ]
}

/// Append-only CSV writer for iteration records.
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
    rows: usize,
    flush_every: usize,
}

impl CsvSink {
    /// Create (truncate) `path`; rows are flushed every `flush_every` appends
    /// (0 flushes only on [`CsvSink::finish`]).
    pub fn create(path: impl AsRef<Path>, flush_every: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        Ok(CsvSink {
            path,
            writer,
            rows: 0,
            flush_every,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn append_row(&mut self, record: &IterationRecord) -> Result<()> {
        if self.rows == 0 {
            self.writer.write_record(CSV_HEADER)?;
        }
        self.writer.write_record(csv_fields(record))?;
        self.rows += 1;
        if self.flush_every > 0 && self.rows.is_multiple_of(self.flush_every) {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        if self.rows == 0 {
            self.writer.write_record(CSV_HEADER)?;
        }
        self.flush()
    }
}

/// One parsed CSV row; blank fields become `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub iter: usize,
    pub epsilon: f64,
    pub j_trials: usize,
    pub ls_steps_cum: usize,
    pub mb_loss: f64,
    pub full_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub sparsity_pct: f64,
    pub wall_s: f64,
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::InvalidInput(format!("{}: unexpected header {header:?}", path.display())));
    }
    let bad = |field: &str, v: &str| Error::InvalidInput(format!("{}: bad {field} value `{v}`", path.display()));
    let num = |field: &str, v: &str| v.parse::<f64>().map_err(|_| bad(field, v));
    let int = |field: &str, v: &str| v.parse::<usize>().map_err(|_| bad(field, v));
    let optional = |field: &str, v: &str| if v.is_empty() { Ok(None) } else { num(field, v).map(Some) };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let r = rec?;
        rows.push(CsvRow {
            iter: int("iter", &r[0])?,
            epsilon: num("epsilon", &r[1])?,
            j_trials: int("j_trials", &r[2])?,
            ls_steps_cum: int("ls_steps_cum", &r[3])?,
            mb_loss: num("mb_loss", &r[4])?,
            full_loss: optional("full_loss", &r[5])?,
            train_acc: optional("train_acc", &r[6])?,
            test_acc: optional("test_acc", &r[7])?,
            sparsity_pct: num("sparsity_pct", &r[8])?,
            wall_s: num("wall_s", &r[9])?,
        });
    }
    Ok(rows)
}

/// Write every record of `log` to `path`.
pub fn write_csv(path: impl AsRef<Path>, log: &RunLog) -> Result<()> {
    let mut sink = CsvSink::create(path, 0)?;
    for r in &log.records {
        sink.append_row(r)?;
    }
    sink.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub iterations: usize,
    pub final_epsilon: f64,
    pub final_mb_loss: f64,
    pub final_full_loss: Option<f64>,
    pub final_train_acc: Option<f64>,
    pub final_test_acc: Option<f64>,
    pub best_test_acc: Option<f64>,
    pub final_sparsity_pct: f64,
    pub line_search_steps: usize,
    pub wall_s: f64,
}

pub fn summarize(log: &RunLog) -> Result<Summary> {
    let last = log
        .records
        .last()
        .ok_or_else(|| Error::InvalidInput("cannot summarize an empty run log".into()))?;
    let best_test_acc = log
        .records
        .iter()
        .filter_map(|r| r.test_acc)
        .fold(None, |best: Option<f64>, a| Some(best.map_or(a, |b| b.max(a))));
    let latest = |f: fn(&IterationRecord) -> Option<f64>| log.records.iter().rev().find_map(f);
    Ok(Summary {
        iterations: log.records.len(),
        final_epsilon: last.epsilon,
        final_mb_loss: last.mb_loss_after,
        final_full_loss: latest(|r| r.full_loss),
        final_train_acc: latest(|r| r.train_acc),
        final_test_acc: latest(|r| r.test_acc),
        best_test_acc,
        final_sparsity_pct: last.sparsity_pct,
        line_search_steps: last.ls_steps_cum,
        wall_s: last.wall_s,
    })
}

// ---------------------------------------------------------------------------
// snapshots
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerShape {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SnapshotMeta {
    format: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerShape>,
}

const SNAPSHOT_FORMAT: &str = "f64-le";

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Dump parameters as flat little-endian f64 (layer by layer, weights then
/// bias) at `path`, with a JSON sidecar of shapes next to it.
pub fn write_snapshot(path: impl AsRef<Path>, model: &Model, params: &ParamSet) -> Result<()> {
    let path = path.as_ref();
    params.check(model)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = Vec::with_capacity(8 * params.len());
    for v in params.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let meta = SnapshotMeta {
        format: SNAPSHOT_FORMAT.into(),
        input_shape: model.input_shape().to_vec(),
        layers: params
            .layers()
            .iter()
            .map(|l| LayerShape {
                weight: l.weight.len(),
                bias: l.bias.len(),
            })
            .collect(),
    };
    let side = sidecar(path);
    let mut f = BufWriter::new(File::create(&side).map_err(|e| Error::io(&side, e))?);
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n").map_err(|e| Error::io(&side, e))?;
    f.flush().map_err(|e| Error::io(&side, e))
}

pub fn read_snapshot(path: impl AsRef<Path>, model: &Model) -> Result<ParamSet> {
    let path = path.as_ref();
    let side = sidecar(path);
    let meta: SnapshotMeta =
        serde_json::from_reader(File::open(&side).map_err(|e| Error::io(&side, e))?)?;
    if meta.format != SNAPSHOT_FORMAT {
        return Err(Error::InvalidInput(format!("unknown snapshot format `{}`", meta.format)));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected: usize = meta.layers.iter().map(|l| l.weight + l.bias).sum();
    if bytes.len() != 8 * expected {
        return Err(Error::Shape(format!(
            "{}: {} bytes for {expected} values",
            path.display(),
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
    let layers = meta
        .layers
        .iter()
        .map(|l| LayerParams {
            weight: take(l.weight),
            bias: take(l.bias),
        })
        .collect();
    ParamSet::from_layers(model, layers)
}
