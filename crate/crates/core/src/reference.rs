//! Published reference values bundled for reports and regression checks.
//! These are display constants, never computational ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ModelPoint;

/// Raw bundled CSV: `table,row,metric,value,citation,estimated`.
pub const REFERENCE_CSV: &str = include_str!("../data/reference.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub table: String,
    pub row: String,
    pub metric: String,
    /// Verbatim text of the value.
    pub value: String,
    pub citation: String,
    /// True for values not printed in the source tables (e.g. parameter
    /// counts taken from the architectures' own publications).
    pub estimated: bool,
}

impl ReferenceEntry {
    pub fn number(&self) -> Result<f64> {
        self.value
            .parse()
            .map_err(|_| Error::format(format!("reference value `{}` is not numeric", self.value)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTable {
    entries: Vec<ReferenceEntry>,
}

impl ReferenceTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let entries = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ReferenceEntry>, _>>()
            .map_err(|e| Error::format(format!("reference csv: {e}")))?;
        Ok(Self { entries })
    }

    pub fn bundled() -> Self {
        Self::parse(REFERENCE_CSV).expect("bundled reference data parses")
    }

    pub fn entries(&self) -> &[ReferenceEntry] {
        &self.entries
    }

    /// Case-insensitive on all three keys.
    pub fn get(&self, table: &str, row: &str, metric: &str) -> Result<&ReferenceEntry> {
        self.entries
            .iter()
            .find(|e| {
                e.table.eq_ignore_ascii_case(table)
                    && e.row.eq_ignore_ascii_case(row)
                    && e.metric.eq_ignore_ascii_case(metric)
            })
            .ok_or_else(|| Error::Empty(format!("no reference value for ({table}, {row}, {metric})")))
    }

    pub fn lookup(&self, table: &str, row: &str, metric: &str) -> Result<f64> {
        self.get(table, row, metric)?.number()
    }

    /// F1 versus parameter count (millions) for the model comparison plot.
    pub fn model_points(&self) -> Result<Vec<ModelPoint>> {
        let mut rows: Vec<&str> = Vec::new();
        for e in self.entries.iter().filter(|e| e.table == "fig10") {
            if !rows.contains(&e.row.as_str()) {
                rows.push(&e.row);
            }
        }
        rows.into_iter()
            .map(|r| {
                ModelPoint::new(
                    r,
                    self.lookup("fig10", r, "f1")?,
                    self.lookup("fig10", r, "params_millions")?,
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_lookups() {
        let t = ReferenceTable::bundled();
        assert_eq!(t.lookup("table3", "Darknet-53", "f1_synthetic_init").unwrap(), 94.21);
        assert_eq!(t.lookup("table6", "proposed", "bleu1").unwrap(), 0.6027);
        assert_eq!(t.lookup("table1", "total", "grand_total").unwrap(), 38759.0);
        assert_eq!(t.lookup("table5", "Darknet-53 + FS", "map").unwrap(), 96.32);
        assert!(matches!(t.lookup("table9", "x", "y"), Err(Error::Empty(_))));
    }

    #[test]
    fn dataset_counts_add_up() {
        let t = ReferenceTable::bundled();
        let sum: f64 = ["Point", "Drag", "Loupe", "Pinch", "Other", "None"]
            .iter()
            .map(|g| t.lookup("table1", g, "real").unwrap())
            .sum();
        assert_eq!(sum, t.lookup("table1", "Total", "real").unwrap());
        let grand: f64 = ["synthetic", "real", "captioning"]
            .iter()
            .map(|m| t.lookup("table1", "Total", m).unwrap())
            .sum();
        assert_eq!(grand, 38759.0);
    }

    #[test]
    fn model_points_load() {
        let pts = ReferenceTable::bundled().model_points().unwrap();
        assert_eq!(pts.len(), 15);
        assert!(pts.iter().any(|p| p.name == "SelAE"));
    }
}
