use std::io::Write;
use std::path::{Path, PathBuf};

/// Columns holding elapsed time; they are the only columns allowed to differ
/// between two runs of the same config.
pub const TIMING_COLUMNS: [&str; 2] = ["wall_ms", "cumulative_wall_ms"];

/// A CSV table assembled in memory so that row order never depends on
/// thread scheduling.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.header)?;
        for row in &self.rows {
            wr.write_record(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes `<dir>/<name>.csv`, creating `dir` if needed.
    pub fn write_to_dir(&self, dir: &Path, name: &str) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{name}.csv"));
        let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        self.write(file).map_err(std::io::Error::other)?;
        Ok(path)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

pub fn millis(ms: f64) -> String {
    format!("{ms:.3}")
}
