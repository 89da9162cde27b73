use std::path::Path;

use crate::error::{Error, Result};

/// Per-modality telemetry of one step; `None` for modalities absent from the sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModalityRecord {
    pub sep: f64,
    pub relation_gap: f64,
    pub prototype_gap: f64,
    pub relation_ema: f64,
    pub prototype_ema: f64,
    pub total_gap: f64,
    pub weight: f64,
    pub gamma: f64,
    pub similarity: f64,
    pub damped: bool,
    pub decay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub sample_id: String,
    pub total: f64,
    pub fuse: f64,
    pub sep: f64,
    pub rel: f64,
    pub proto: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub modalities: Vec<Option<ModalityRecord>>,
}

const SCALAR_COLUMNS: [&str; 10] = [
    "step", "epoch", "sample_id", "total", "fuse", "sep", "rel", "proto", "alpha1", "alpha2",
];
const MODALITY_COLUMNS: [&str; 12] = [
    "present", "sep", "gr", "gp", "ema_gr", "ema_gp", "gap", "w", "gamma", "sim", "damped",
    "decay",
];

/// Column order of the run log CSV for `m` modalities.
pub fn columns(m: usize) -> Vec<String> {
    let mut cols: Vec<String> = SCALAR_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 0..m {
        cols.extend(MODALITY_COLUMNS.iter().map(|c| format!("{c}_{i}")));
    }
    cols
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub n_modalities: usize,
    pub records: Vec<StepRecord>,
}

impl RunLog {
    pub fn new(n_modalities: usize) -> Self {
        Self {
            n_modalities,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, r: StepRecord) {
        self.records.push(r);
    }

    fn row(&self, r: &StepRecord) -> Vec<String> {
        let mut row = vec![
            r.step.to_string(),
            r.epoch.to_string(),
            r.sample_id.clone(),
            r.total.to_string(),
            r.fuse.to_string(),
            r.sep.to_string(),
            r.rel.to_string(),
            r.proto.to_string(),
            r.alpha1.to_string(),
            r.alpha2.to_string(),
        ];
        for m in &r.modalities {
            match m {
                Some(m) => {
                    row.push("1".into());
                    for v in [
                        m.sep,
                        m.relation_gap,
                        m.prototype_gap,
                        m.relation_ema,
                        m.prototype_ema,
                        m.total_gap,
                        m.weight,
                        m.gamma,
                        m.similarity,
                    ] {
                        row.push(v.to_string());
                    }
                    row.push((m.damped as u8).to_string());
                    row.push(m.decay.to_string());
                }
                None => {
                    row.push("0".into());
                    row.extend(std::iter::repeat_n(String::new(), MODALITY_COLUMNS.len() - 1));
                }
            }
        }
        row
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Internal(format!("csv: {e}"));
        w.write_record(columns(self.n_modalities)).map_err(io)?;
        for r in &self.records {
            w.write_record(self.row(r)).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Internal(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    /// Write the whole log, replacing any existing file.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    /// Parse a log written by [`RunLog::write`].
    pub fn read(path: &Path) -> Result<Self> {
        let table = Table::read(path)?;
        let m = (0..)
            .take_while(|i| table.index(&format!("present_{i}")).is_some())
            .count();
        for c in columns(m) {
            table.require(&c)?;
        }
        let mut log = RunLog::new(m);
        for row in 0..table.rows.len() {
            let f = |c: &str| table.float(row, c);
            let mut modalities = Vec::with_capacity(m);
            for i in 0..m {
                if table.get(row, &format!("present_{i}"))? == "1" {
                    modalities.push(Some(ModalityRecord {
                        sep: f(&format!("sep_{i}"))?,
                        relation_gap: f(&format!("gr_{i}"))?,
                        prototype_gap: f(&format!("gp_{i}"))?,
                        relation_ema: f(&format!("ema_gr_{i}"))?,
                        prototype_ema: f(&format!("ema_gp_{i}"))?,
                        total_gap: f(&format!("gap_{i}"))?,
                        weight: f(&format!("w_{i}"))?,
                        gamma: f(&format!("gamma_{i}"))?,
                        similarity: f(&format!("sim_{i}"))?,
                        damped: table.get(row, &format!("damped_{i}"))? == "1",
                        decay: f(&format!("decay_{i}"))?,
                    }));
                } else {
                    modalities.push(None);
                }
            }
            log.push(StepRecord {
                step: f("step")? as u64,
                epoch: f("epoch")? as usize,
                sample_id: table.get(row, "sample_id")?.to_string(),
                total: f("total")?,
                fuse: f("fuse")?,
                sep: f("sep")?,
                rel: f("rel")?,
                proto: f("proto")?,
                alpha1: f("alpha1")?,
                alpha2: f("alpha2")?,
                modalities,
            });
        }
        Ok(log)
    }
}

/// A CSV file held as strings, addressed by column name.
pub struct Table {
    pub path: std::path::PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Internal(format!("csv {}: {other:?}", path.display())),
        })?;
        let bad = |e: csv::Error| Error::Internal(format!("csv {}: {e}", path.display()));
        let header = r.headers().map_err(bad)?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec.map_err(bad)?.iter().map(String::from).collect());
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    pub fn index(&self, col: &str) -> Option<usize> {
        self.header.iter().position(|h| h == col)
    }

    pub fn require(&self, col: &str) -> Result<usize> {
        self.index(col)
            .ok_or_else(|| Error::MissingColumn(col.to_string()))
    }

    pub fn get(&self, row: usize, col: &str) -> Result<&str> {
        let i = self.require(col)?;
        Ok(self.rows[row].get(i).map(String::as_str).unwrap_or(""))
    }

    pub fn float(&self, row: usize, col: &str) -> Result<f64> {
        let s = self.get(row, col)?;
        s.parse().map_err(|_| {
            Error::Internal(format!(
                "{}: row {row} column {col}: `{s}` is not a number",
                self.path.display()
            ))
        })
    }

    /// Empty cells become `None`.
    pub fn opt_float(&self, row: usize, col: &str) -> Result<Option<f64>> {
        if self.get(row, col)?.is_empty() {
            Ok(None)
        } else {
            self.float(row, col).map(Some)
        }
    }
}
