//! Training history as CSV.

use std::io::{Read, Write};
use std::path::Path;

use evsnn_core::MetricsRow;

use crate::error::{Context, Error, Result};

pub const HEADER: [&str; 6] = ["epoch", "iteration", "train_loss", "train_acc", "val_loss", "val_acc"];

// 17 significant digits: exact round trip for f64
fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn optional(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub fn export_metrics_to<W: Write>(w: W, history: &[MetricsRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER).map_err(csv_error)?;
    for row in history {
        out.write_record([
            row.epoch.to_string(),
            row.iteration.to_string(),
            real(row.train_loss),
            real(row.train_accuracy),
            optional(row.val_loss),
            optional(row.val_accuracy),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn import_metrics_from<R: Read>(r: R) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers().map_err(csv_error)?;
    if header.iter().ne(HEADER) {
        return Err(Error::Format(format!("unexpected metrics header {header:?}")));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |name: &str| Error::Parse {
            line,
            message: format!("invalid {name}"),
        };
        let int = |i: usize| record[i].parse::<usize>().map_err(|_| bad(HEADER[i]));
        let float = |i: usize| record[i].parse::<f64>().map_err(|_| bad(HEADER[i]));
        let opt = |i: usize| {
            if record[i].is_empty() {
                Ok(None)
            } else {
                float(i).map(Some)
            }
        };
        rows.push(MetricsRow {
            epoch: int(0)?,
            iteration: int(1)?,
            train_loss: float(2)?,
            train_accuracy: float(3)?,
            val_loss: opt(4)?,
            val_accuracy: opt(5)?,
        });
    }
    Ok(rows)
}

pub fn export_metrics(path: &Path, history: &[MetricsRow]) -> Result<()> {
    let file = std::fs::File::create(path).in_file(path)?;
    export_metrics_to(std::io::BufWriter::new(file), history).in_file(path)
}

pub fn import_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = std::fs::File::open(path).in_file(path)?;
    import_metrics_from(std::io::BufReader::new(file)).in_file(path)
}
