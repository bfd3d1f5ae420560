use std::io::{Read, Write};

use super::{PermutedDataset, SphereDatasetSpec};
use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"MPD1";
pub const DATASET_VERSION: u32 = 1;

// header: magic, version, P, D, d, M_train, M_test, r, epsilon, seed, permutation seed
const HEADER_BYTES: u128 = 4 + 4 + 5 * 4 + 2 * 8 + 2 * 8;

/// Writes the dataset container: header, then the training features
/// (row-major f64), true labels (u32), training labels (u32), permutation
/// mask (u8), test features and test labels.
pub fn write_dataset(data: &PermutedDataset, out: impl Write) -> Result<()> {
    let s = data.spec();
    let mut w = Writer::new(out);
    w.bytes(DATASET_MAGIC)?;
    w.u32(DATASET_VERSION)?;
    w.len_u32(s.n_classes, "n_classes")?;
    w.len_u32(s.ambient_dim, "ambient_dim")?;
    w.len_u32(s.sphere_dim, "sphere_dim")?;
    w.len_u32(s.train_per_class, "train_per_class")?;
    w.len_u32(s.test_per_class, "test_per_class")?;
    w.f64(s.radius)?;
    w.f64(data.epsilon())?;
    w.u64(s.seed)?;
    w.u64(data.permutation_seed())?;
    w.matrix(data.train_inputs())?;
    for &l in data.true_labels().iter().chain(data.train_labels()) {
        w.len_u32(l, "label")?;
    }
    for &m in data.permuted_mask() {
        w.u8(u8::from(m))?;
    }
    w.matrix(data.test_inputs())?;
    for &l in data.test_labels() {
        w.len_u32(l, "label")?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_dataset(input: impl Read) -> Result<PermutedDataset> {
    let buf = Reader::read_all(input)?;
    let mut r = Reader::new(&buf);
    r.require(HEADER_BYTES)?;
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let spec = SphereDatasetSpec {
        n_classes: r.u32()? as usize,
        ambient_dim: r.u32()? as usize,
        sphere_dim: r.u32()? as usize,
        train_per_class: r.u32()? as usize,
        test_per_class: r.u32()? as usize,
        radius: r.f64()?,
        seed: 0,
    };
    let epsilon = r.f64()?;
    let spec = SphereDatasetSpec { seed: r.u64()?, ..spec };
    let perm_seed = r.u64()?;
    let (n_train, n_test, dim) = (
        spec.n_classes as u128 * spec.train_per_class as u128,
        spec.n_classes as u128 * spec.test_per_class as u128,
        spec.ambient_dim as u128,
    );
    r.require(n_train * dim * 8 + n_train * 9 + n_test * dim * 8 + n_test * 4)?;

    let train = r.matrix(spec.n_train(), spec.ambient_dim)?;
    let labels = |r: &mut Reader, n: usize| -> Result<Vec<usize>> {
        (0..n).map(|_| Ok(r.u32()? as usize)).collect()
    };
    let true_labels = labels(&mut r, spec.n_train())?;
    let train_labels = labels(&mut r, spec.n_train())?;
    let mask = (0..spec.n_train())
        .map(|_| match r.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Format(format!("mask byte {v}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let test = r.matrix(spec.n_test(), spec.ambient_dim)?;
    let test_labels = labels(&mut r, spec.n_test())?;
    r.expect_end()?;
    spec.validate()
        .map_err(|e| Error::Format(format!("inconsistent header: {e}")))?;
    PermutedDataset::from_parts(
        spec, train, true_labels, train_labels, mask, epsilon, perm_seed, test, test_labels,
    )
    .map_err(|e| Error::Format(e.to_string()))
}

/// One row per example: split, index, labels, mask and features.
pub fn write_dataset_csv(data: &PermutedDataset, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = data.spec().ambient_dim;
    let mut header = vec!["split".to_string(), "index".into(), "true_label".into(), "train_label".into(), "permuted".into()];
    header.extend((0..dim).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(dim + 5);
    let mut emit = |split: &str, i: usize, t: usize, l: usize, p: bool, x: &nalgebra::DMatrix<f64>| -> Result<()> {
        rec.clear();
        rec.extend([split.to_string(), i.to_string(), t.to_string(), l.to_string(), u8::from(p).to_string()]);
        rec.extend(x.row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
        Ok(())
    };
    for i in 0..data.n_train() {
        emit("train", i, data.true_labels()[i], data.train_labels()[i], data.permuted_mask()[i], data.train_inputs())?;
    }
    for (i, &t) in data.test_labels().iter().enumerate() {
        emit("test", i, t, t, false, data.test_inputs())?;
    }
    w.flush()?;
    Ok(())
}
