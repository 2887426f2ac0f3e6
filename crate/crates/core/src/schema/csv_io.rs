//! CSV ingestion and emission. RFC-4180-style, UTF-8, mandatory header row,
//! empty cell = missing value.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use super::table::{DataTable, TableBuilder, TableError};
use super::TableSchema;

impl DataTable {
    /// Load a CSV file against a schema. Header names must equal the schema's
    /// feature names as a set; column order in the file is free.
    pub fn from_csv_path(path: impl AsRef<Path>, schema: Arc<TableSchema>) -> Result<Self, TableError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, schema)
    }

    pub fn from_csv_reader<R: std::io::Read>(
        reader: R,
        schema: Arc<TableSchema>,
    ) -> Result<Self, TableError> {
        let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
        let header = rdr.headers()?.clone();

        // Map schema feature -> file column.
        let mut col_of_feature = vec![usize::MAX; schema.n_features()];
        let mut extra = Vec::new();
        for (col, name) in header.iter().enumerate() {
            match schema.index_of(name) {
                Some(fi) if col_of_feature[fi] == usize::MAX => col_of_feature[fi] = col,
                _ => extra.push(name.to_string()),
            }
        }
        let missing: Vec<String> = schema
            .features()
            .iter()
            .enumerate()
            .filter(|(i, _)| col_of_feature[*i] == usize::MAX)
            .map(|(_, f)| f.name.clone())
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(TableError::HeaderMismatch { missing, extra });
        }

        let mut builder = TableBuilder::new(schema);
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record?;
            let cells: Vec<Option<&str>> = col_of_feature
                .iter()
                .map(|&col| {
                    let v = record.get(col).unwrap_or("");
                    if v.is_empty() {
                        None
                    } else {
                        Some(v)
                    }
                })
                .collect();
            builder.push_raw(&cells).map_err(|violation| TableError::Cell {
                // +2: header line plus 1-based numbering
                row: row_idx + 2,
                violation,
            })?;
        }
        Ok(builder.finish())
    }

    /// Write the table as CSV in schema column order. Floats use the shortest
    /// round-trip decimal form, so write -> load -> write is a fixpoint.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TableError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.schema().features().iter().map(|f| f.name.as_str()))?;
        for row in 0..self.n_rows() {
            let cells = self.raw_row(row);
            wtr.write_record(cells.iter().map(|c| c.as_deref().unwrap_or("")))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}
