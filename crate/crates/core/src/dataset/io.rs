use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{ArRecord, Dataset, FlareClass, SERIES_LEN};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const FIXED_COLUMNS: [&str; 4] = ["ar_id", "class_label", "multi_ar", "t_index"];

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(std::io::BufReader::new(file))
}

struct Partial {
    class_label: FlareClass,
    multi_ar: bool,
    first_line: usize,
    rows: Vec<Option<Vec<f64>>>,
}

/// Parses the dataset CSV: `ar_id,class_label,multi_ar,t_index,<features...>`.
///
/// Records keep the order in which their ids first appear; rows within a
/// record are placed by `t_index`.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    for (i, name) in FIXED_COLUMNS.iter().enumerate() {
        if header.get(i).map(str::trim) != Some(*name) {
            return Err(Error::ingest(None, Some(1), format!("missing column {name}")));
        }
    }
    let feature_names: Vec<String> = header.iter().skip(4).map(|s| s.trim().to_string()).collect();
    if feature_names.is_empty() {
        return Err(Error::ingest(None, Some(1), "no feature columns"));
    }
    let width = 4 + feature_names.len();

    let mut order = Vec::new();
    let mut partial: HashMap<u64, Partial> = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::ingest(None, Some(line), e.to_string()))?;
        let ar_id: u64 = row[0]
            .trim()
            .parse()
            .map_err(|_| Error::ingest(None, Some(line), format!("bad ar_id {:?}", &row[0])))?;
        let err = |msg: String| Error::ingest(Some(ar_id), Some(line), msg);
        if row.len() != width {
            return Err(err(format!("expected {width} columns, found {}", row.len())));
        }
        let class_label: FlareClass = row[1].parse().map_err(err)?;
        let multi_ar = match row[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("multi_ar must be 0 or 1, got {other:?}"))),
        };
        let t: usize = row[3]
            .trim()
            .parse()
            .ok()
            .filter(|&t| t < SERIES_LEN)
            .ok_or_else(|| err(format!("t_index {:?} outside 0..{}", &row[3], SERIES_LEN - 1)))?;
        let values = row
            .iter()
            .skip(4)
            .zip(&feature_names)
            .map(|(cell, name)| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("non-numeric value {cell:?} in column {name}")))
            })
            .collect::<Result<Vec<f64>>>()?;

        let entry = partial.entry(ar_id).or_insert_with(|| {
            order.push(ar_id);
            Partial {
                class_label,
                multi_ar,
                first_line: line,
                rows: vec![None; SERIES_LEN],
            }
        });
        if entry.class_label != class_label || entry.multi_ar != multi_ar {
            return Err(err("class_label or multi_ar differs between rows of the same AR".into()));
        }
        if entry.rows[t].replace(values).is_some() {
            return Err(err(format!("duplicate t_index {t}")));
        }
    }

    let mut records = Vec::with_capacity(order.len());
    for id in order {
        let p = partial.remove(&id).expect("id recorded");
        let present = p.rows.iter().filter(|r| r.is_some()).count();
        if present != SERIES_LEN {
            return Err(Error::ingest(
                Some(id),
                Some(p.first_line),
                format!("expected {SERIES_LEN} rows, found {present}"),
            ));
        }
        let data: Vec<f64> = p.rows.into_iter().flatten().flatten().collect();
        records.push(ArRecord {
            ar_id: id,
            class_label: p.class_label,
            multi_ar: p.multi_ar,
            series: Tensor::new(vec![SERIES_LEN, feature_names.len()], data)?,
        });
    }
    Dataset::new(feature_names, records)
}

/// Writes the dataset CSV. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(dataset.feature_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in &dataset.records {
        for t in 0..SERIES_LEN {
            let mut row = vec![
                r.ar_id.to_string(),
                r.class_label.to_string(),
                u8::from(r.multi_ar).to_string(),
                t.to_string(),
            ];
            row.extend(r.series.row(t).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(dataset, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_for(ar_rows: &[(u64, &str, usize)]) -> String {
        let mut s = String::from("ar_id,class_label,multi_ar,t_index,a,b\n");
        for &(id, class, n) in ar_rows {
            for t in 0..n {
                s.push_str(&format!("{id},{class},0,{t},{}.5,-{t}\n", t));
            }
        }
        s
    }

    #[test]
    fn reads_two_records() {
        let ds = read_csv(csv_for(&[(7, "M", 40), (3, "NOFLARE", 40)]).as_bytes()).unwrap();
        assert_eq!(ds.records.len(), 2);
        assert_eq!(ds.records[0].ar_id, 7);
        assert_eq!(ds.records[1].class_label, FlareClass::NoFlare);
        assert_eq!(ds.records[0].series.row(39), &[39.5, -39.0]);
    }

    #[test]
    fn short_record_names_ar() {
        let err = read_csv(csv_for(&[(7, "M", 40), (12, "C", 39)]).as_bytes()).unwrap_err();
        match err {
            Error::Ingestion { ar_id, .. } => assert_eq!(ar_id, Some(12)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_numeric_cell_names_ar_and_line() {
        let mut s = csv_for(&[(5, "X", 40)]);
        s = s.replacen("5,X,0,2,2.5", "5,X,0,2,abc", 1);
        match read_csv(s.as_bytes()).unwrap_err() {
            Error::Ingestion { ar_id, line, .. } => {
                assert_eq!(ar_id, Some(5));
                assert_eq!(line, Some(4));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_column_rejected() {
        let s = "ar_id,class_label,t_index,a\n1,M,0,1\n";
        assert!(matches!(read_csv(s.as_bytes()), Err(Error::Ingestion { .. })));
    }

    #[test]
    fn rows_are_ordered_by_t_index() {
        let mut s = String::from("ar_id,class_label,multi_ar,t_index,a\n");
        for t in (0..40).rev() {
            s.push_str(&format!("1,C,1,{t},{t}\n"));
        }
        let ds = read_csv(s.as_bytes()).unwrap();
        assert!(ds.records[0].multi_ar);
        let col: Vec<f64> = ds.records[0].series.data().to_vec();
        assert_eq!(col, (0..40).map(f64::from).collect::<Vec<_>>());
    }
}
