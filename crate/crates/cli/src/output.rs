//! JSON and CSV emission.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use clap::ValueEnum;
use edge_carbon::{Error, Result};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// A header plus string rows.
#[derive(Debug, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: impl IntoIterator<Item = impl ToString>) -> &mut Self {
        self.rows
            .push(cells.into_iter().map(|c| c.to_string()).collect());
        self
    }

    fn write(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let map = |e: csv::Error| Error::Io(io::Error::other(e));
        out.write_record(&self.header).map_err(map)?;
        for r in &self.rows {
            out.write_record(r).map_err(map)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).map_err(|e| {
                io::Error::new(e.kind(), format!("{}: {e}", p.display()))
            })?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

/// Writes `value` as pretty JSON, or `table()` as CSV.
pub fn emit<T: Serialize>(
    value: &T,
    table: impl FnOnce() -> Table,
    fmt: Format,
    out: Option<&Path>,
) -> Result<()> {
    let mut w = sink(out)?;
    match fmt {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, value)?;
            w.write_all(b"\n")?;
        }
        Format::Csv => table().write(&mut w)?,
    }
    w.flush()?;
    Ok(())
}
