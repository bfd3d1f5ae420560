use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::geometry::ManifoldSet;

pub const DUMP_MAGIC: &[u8; 4] = b"MFP1";
pub const DUMP_VERSION: u32 = 1;

/// Activations of an externally trained model, one manifold per label.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub set: ManifoldSet,
    pub provenance: String,
}

fn equal_size(set: &ManifoldSet) -> Result<usize> {
    let m = set.manifold(0).nrows();
    if set.manifolds().iter().any(|x| x.nrows() != m) {
        return Err(Error::InvalidInput("dump format needs equally sized manifolds".into()));
    }
    Ok(m)
}

/// Layout: magic, version, `P`, `M`, `N` (u32), the `P*M x N` row-major
/// features (f64, manifold after manifold), one u32 label per row, then the
/// provenance string (u32 length + UTF-8).
pub fn write_dump(set: &ManifoldSet, provenance: &str, out: impl Write) -> Result<()> {
    let m = equal_size(set)?;
    let mut w = Writer::new(out);
    w.bytes(DUMP_MAGIC)?;
    w.u32(DUMP_VERSION)?;
    w.len_u32(set.len(), "P")?;
    w.len_u32(m, "M")?;
    w.len_u32(set.ambient_dim(), "N")?;
    for x in set.manifolds() {
        w.matrix(x)?;
    }
    for &c in set.class_ids() {
        for _ in 0..m {
            w.len_u32(c, "label")?;
        }
    }
    w.len_u32(provenance.len(), "provenance length")?;
    w.bytes(provenance.as_bytes())?;
    w.finish()?;
    Ok(())
}

/// Groups rows by label; manifolds come out in ascending label order.
fn group_rows(features: &DMatrix<f64>, labels: &[usize]) -> Result<ManifoldSet> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let (ids, manifolds): (Vec<usize>, Vec<DMatrix<f64>>) =
        groups.into_iter().map(|(l, rows)| (l, features.select_rows(&rows))).unzip();
    ManifoldSet::new(manifolds, ids)
}

pub fn read_dump(input: impl Read) -> Result<ActivationDump> {
    let buf = Reader::read_all(input)?;
    let mut r = Reader::new(&buf);
    r.require(20)?;
    r.magic(DUMP_MAGIC)?;
    r.version(DUMP_VERSION)?;
    let p = r.u32()? as usize;
    let m = r.u32()? as usize;
    let n = r.u32()? as usize;
    let rows = p * m;
    r.require(rows as u128 * n as u128 * 8 + rows as u128 * 4 + 4)?;
    let features = r.matrix(rows, n)?;
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite value in dump payload".into()));
    }
    let labels = (0..rows).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
    let len = r.u32()? as usize;
    let provenance = String::from_utf8(r.take(len)?.to_vec())
        .map_err(|_| Error::Format("provenance is not UTF-8".into()))?;
    r.expect_end()?;
    let set = group_rows(&features, &labels).map_err(|e| Error::Format(e.to_string()))?;
    if set.len() != p || set.manifolds().iter().any(|x| x.nrows() != m) {
        return Err(Error::Format(format!("labels do not form {p} groups of {m} rows")));
    }
    Ok(ActivationDump { set, provenance })
}

/// Header `label,x0,..`; one row per point.
pub fn write_dump_csv(set: &ManifoldSet, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["label".to_string()];
    header.extend((0..set.ambient_dim()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(set.ambient_dim() + 1);
    for (x, &c) in set.manifolds().iter().zip(set.class_ids()) {
        for row in x.row_iter() {
            rec.clear();
            rec.push(c.to_string());
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dump_csv(input: impl Read) -> Result<ManifoldSet> {
    let mut rd = csv::Reader::from_reader(input);
    let n = rd.headers()?.len().saturating_sub(1);
    if n == 0 {
        return Err(Error::Format("CSV dump needs a label column and features".into()));
    }
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Format(format!("row {}: bad {what}", i + 1));
        labels.push(rec[0].trim().parse::<usize>().map_err(|_| bad("label"))?);
        for f in rec.iter().skip(1) {
            let v: f64 = f.trim().parse().map_err(|_| bad("value"))?;
            if !v.is_finite() {
                return Err(bad("non-finite value"));
            }
            values.push(v);
        }
    }
    let features = DMatrix::from_row_slice(labels.len(), n, &values);
    group_rows(&features, &labels)
}

/// Reads a dump, choosing CSV for `.csv` paths and the binary form otherwise.
pub fn ingest_activation_dump(path: impl AsRef<Path>) -> Result<ManifoldSet> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_dump_csv(file)
    } else {
        Ok(read_dump(file)?.set)
    }
}
