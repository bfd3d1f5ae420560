use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FeedforwardModel, NetSpec};
use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MPC1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 of the spec's JSON encoding.
pub fn spec_hash(spec: &NetSpec) -> [u8; 32] {
    let json = serde_json::to_vec(spec).expect("spec serializes");
    Sha256::digest(&json).into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Layout: magic, version, spec hash (32 bytes), epoch (u64), layer count
/// (u32), bias flag (u8), then per layer `rows, cols` (u32) and the
/// row-major weights; bias vectors follow when present.
pub fn write_checkpoint(model: &FeedforwardModel, out: impl Write) -> Result<()> {
    let mut w = Writer::new(out);
    w.bytes(CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;
    w.bytes(&spec_hash(model.spec()))?;
    w.u64(model.epoch as u64)?;
    w.len_u32(model.n_layers(), "layer count")?;
    w.u8(u8::from(model.biases.is_some()))?;
    for m in &model.weights {
        w.len_u32(m.nrows(), "rows")?;
        w.len_u32(m.ncols(), "cols")?;
        w.matrix(m)?;
    }
    for b in model.biases.iter().flatten() {
        w.len_u32(b.len(), "bias length")?;
        for &v in b.iter() {
            w.f64(v)?;
        }
    }
    w.finish()?;
    Ok(())
}

/// Reads a checkpoint written for `spec`; the stored hash must match.
pub fn read_checkpoint(input: impl Read, spec: &NetSpec) -> Result<FeedforwardModel> {
    let buf = Reader::read_all(input)?;
    let mut r = Reader::new(&buf);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let hash = r.take(32)?;
    if hash != spec_hash(spec) {
        return Err(Error::Format(format!(
            "checkpoint spec hash {} does not match {}",
            hex(hash),
            hex(&spec_hash(spec))
        )));
    }
    let epoch = r.u64()? as usize;
    let n_layers = r.u32()? as usize;
    let has_bias = r.u8()? != 0;
    if n_layers != spec.n_layers() || has_bias != spec.bias {
        return Err(Error::Format("checkpoint layout does not match spec".into()));
    }
    let mut weights = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        weights.push(r.matrix(rows, cols)?);
    }
    let biases = if has_bias {
        let mut b = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let len = r.u32()? as usize;
            let v = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            b.push(DVector::from_vec(v));
        }
        Some(b)
    } else {
        None
    };
    r.expect_end()?;
    let mut model = FeedforwardModel::from_weights(spec.clone(), weights, biases)
        .map_err(|e| Error::Format(e.to_string()))?;
    model.epoch = epoch;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub spec: NetSpec,
    /// Hex SHA-256 of the spec.
    pub spec_hash: String,
    pub epochs: Vec<usize>,
}

#[derive(Debug)]
enum Backing {
    Memory(BTreeMap<usize, FeedforwardModel>),
    Disk(PathBuf),
}

/// Write-once weight snapshots keyed by epoch, kept in memory or as one
/// checkpoint file per epoch plus a JSON manifest.
#[derive(Debug)]
pub struct CheckpointStore {
    manifest: CheckpointManifest,
    backing: Backing,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl CheckpointStore {
    pub fn in_memory(spec: &NetSpec) -> Self {
        Self {
            manifest: CheckpointManifest {
                spec: spec.clone(),
                spec_hash: hex(&spec_hash(spec)),
                epochs: Vec::new(),
            },
            backing: Backing::Memory(BTreeMap::new()),
        }
    }

    /// Creates a store in `dir`, or reopens one written for the same spec.
    pub fn on_disk(dir: impl AsRef<Path>, spec: &NetSpec) -> Result<Self> {
        let dir = dir.as_ref();
        if dir.join(MANIFEST_FILE).exists() {
            let store = Self::open(dir)?;
            if store.manifest.spec != *spec {
                return Err(Error::Config(format!(
                    "checkpoint directory {} holds a different network spec",
                    dir.display()
                )));
            }
            return Ok(store);
        }
        std::fs::create_dir_all(dir)?;
        let store = Self {
            manifest: CheckpointStore::in_memory(spec).manifest,
            backing: Backing::Disk(dir.to_path_buf()),
        };
        store.write_manifest()?;
        Ok(store)
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: CheckpointManifest =
            serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST_FILE))?))?;
        if manifest.spec_hash != hex(&spec_hash(&manifest.spec)) {
            return Err(Error::Format("manifest hash does not match its spec".into()));
        }
        Ok(Self {
            manifest,
            backing: Backing::Disk(dir.to_path_buf()),
        })
    }

    fn write_manifest(&self) -> Result<()> {
        if let Backing::Disk(dir) = &self.backing {
            let tmp = dir.join("manifest.json.tmp");
            serde_json::to_writer_pretty(BufWriter::new(File::create(&tmp)?), &self.manifest)?;
            std::fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        }
        Ok(())
    }

    pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
        dir.join(format!("epoch-{epoch:06}.mpc1"))
    }

    pub fn spec(&self) -> &NetSpec {
        &self.manifest.spec
    }

    pub fn manifest(&self) -> &CheckpointManifest {
        &self.manifest
    }

    pub fn epochs(&self) -> &[usize] {
        &self.manifest.epochs
    }

    pub fn contains(&self, epoch: usize) -> bool {
        self.manifest.epochs.binary_search(&epoch).is_ok()
    }

    /// Stores a snapshot; an epoch can be written only once.
    pub fn insert(&mut self, model: &FeedforwardModel) -> Result<()> {
        if model.spec() != &self.manifest.spec {
            return Err(Error::InvalidInput("model spec differs from the store's".into()));
        }
        let pos = match self.manifest.epochs.binary_search(&model.epoch) {
            Ok(_) => return Err(Error::CheckpointExists(model.epoch)),
            Err(pos) => pos,
        };
        match &mut self.backing {
            Backing::Memory(map) => {
                map.insert(model.epoch, model.clone());
            }
            Backing::Disk(dir) => {
                let path = Self::checkpoint_path(dir, model.epoch);
                let file = File::options().write(true).create_new(true).open(&path).map_err(|e| {
                    if e.kind() == std::io::ErrorKind::AlreadyExists {
                        Error::CheckpointExists(model.epoch)
                    } else {
                        e.into()
                    }
                })?;
                write_checkpoint(model, BufWriter::new(file))?;
            }
        }
        self.manifest.epochs.insert(pos, model.epoch);
        self.write_manifest()
    }

    /// Stores the snapshot unless its epoch is already present.
    pub fn insert_if_absent(&mut self, model: &FeedforwardModel) -> Result<bool> {
        if self.contains(model.epoch) {
            return Ok(false);
        }
        self.insert(model)?;
        Ok(true)
    }

    pub fn get(&self, epoch: usize) -> Result<FeedforwardModel> {
        if !self.contains(epoch) {
            return Err(Error::MissingCheckpoint(epoch));
        }
        match &self.backing {
            Backing::Memory(map) => Ok(map[&epoch].clone()),
            Backing::Disk(dir) => {
                let file = File::open(Self::checkpoint_path(dir, epoch))?;
                read_checkpoint(BufReader::new(file), &self.manifest.spec)
            }
        }
    }
}
