//! Demonstration dataset model: validation, binary/JSONL serialization, and
//! multi-view embedding concatenation.
//!
//! A dataset is a list of trajectories; every step carries a precomputed
//! embedding (the feature the rest of the engine retrieves and measures
//! distances over) and an action vector. Embeddings are inputs here — the
//! engine is encoder-agnostic. On disk floats are 32-bit ("GSRD v1"); in
//! memory everything is f64.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Magic bytes opening a GSRD binary file.
pub const GSRD_MAGIC: &[u8; 4] = b"GSRD";
/// Current GSRD format version.
pub const GSRD_VERSION: u32 = 1;

/// Which vector of a step a validation error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorKind {
    Embedding,
    Action,
}

impl fmt::Display for VectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorKind::Embedding => write!(f, "embedding"),
            VectorKind::Action => write!(f, "action"),
        }
    }
}

/// Errors raised while loading, validating, or writing datasets.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error(
        "dimension mismatch: trajectory {traj}, step {step}: {kind} has length {got}, header says {want}"
    )]
    DimensionMismatch {
        traj: usize,
        step: usize,
        kind: VectorKind,
        got: usize,
        want: usize,
    },
    #[error("non-finite value: trajectory {traj}, step {step}, {kind}[{component}]")]
    NonFinite {
        traj: usize,
        step: usize,
        kind: VectorKind,
        component: usize,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("trajectory {traj} is not marked success; pass allow_failures to accept it")]
    FailureNotAllowed { traj: usize },
    #[error("structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

pub type DataResult<T> = Result<T, DataError>;

/// One observation/action pair inside a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Precomputed feature vector, length = dataset embedding_dim.
    pub embedding: Vec<f64>,
    /// Action vector, length = dataset action_dim.
    pub action: Vec<f64>,
    /// Position within the trajectory (0..=T).
    pub raw_index: usize,
}

/// An ordered run of steps; the last step of a success trajectory is a
/// task-success example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub success: bool,
}

impl Trajectory {
    /// Index of the last step (T).
    pub fn last_raw_index(&self) -> usize {
        self.steps.len() - 1
    }
}

/// A validated demonstration dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub trajectories: Vec<Trajectory>,
    pub embedding_dim: usize,
    pub action_dim: usize,
    /// Free-form provenance notes; not persisted by the GSRD format.
    pub metadata: BTreeMap<String, String>,
}

/// Options affecting dataset validation.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Accept trajectories with success = false. Their terminal vertex is
    /// never linked to the goal downstream.
    pub allow_failures: bool,
}

impl DemoDataset {
    /// Build and validate a dataset from parts.
    pub fn new(
        trajectories: Vec<Trajectory>,
        embedding_dim: usize,
        action_dim: usize,
        opts: LoadOptions,
    ) -> DataResult<Self> {
        let ds = DemoDataset {
            trajectories,
            embedding_dim,
            action_dim,
            metadata: BTreeMap::new(),
        };
        ds.validate(opts)?;
        Ok(ds)
    }

    /// Check every dataset invariant; returns the first violation found.
    pub fn validate(&self, opts: LoadOptions) -> DataResult<()> {
        if self.trajectories.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        for (ti, traj) in self.trajectories.iter().enumerate() {
            if traj.steps.len() < 2 {
                return Err(DataError::MalformedFile(format!(
                    "trajectory {ti} has {} step(s); at least 2 required",
                    traj.steps.len()
                )));
            }
            if !traj.success && !opts.allow_failures {
                return Err(DataError::FailureNotAllowed { traj: ti });
            }
            for (si, step) in traj.steps.iter().enumerate() {
                if step.raw_index != si {
                    return Err(DataError::MalformedFile(format!(
                        "trajectory {ti}: step {si} carries raw_index {}",
                        step.raw_index
                    )));
                }
                check_vector(ti, si, VectorKind::Embedding, &step.embedding, self.embedding_dim)?;
                check_vector(ti, si, VectorKind::Action, &step.action, self.action_dim)?;
            }
        }
        Ok(())
    }

    /// Total number of steps across all trajectories.
    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }

    /// SHA-256 of the canonical GSRD byte serialization, hex-encoded.
    ///
    /// Used as a provenance fingerprint; quantizes to f32 like the on-disk
    /// format does.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        write_gsrd(self, &mut buf).expect("in-memory write cannot fail");
        hasher.update(&buf);
        hex_string(&hasher.finalize())
    }
}

fn check_vector(
    traj: usize,
    step: usize,
    kind: VectorKind,
    v: &[f64],
    want: usize,
) -> DataResult<()> {
    if v.len() != want {
        return Err(DataError::DimensionMismatch {
            traj,
            step,
            kind,
            got: v.len(),
            want,
        });
    }
    for (ci, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(DataError::NonFinite {
                traj,
                step,
                kind,
                component: ci,
            });
        }
    }
    Ok(())
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Load a dataset, sniffing the format from the file extension
/// (`.jsonl` → JSON lines, anything else → GSRD binary).
pub fn load_dataset(path: &Path) -> DataResult<DemoDataset> {
    load_dataset_opts(path, LoadOptions::default())
}

/// `load_dataset` with explicit validation options.
pub fn load_dataset_opts(path: &Path, opts: LoadOptions) -> DataResult<DemoDataset> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let ds = if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        read_jsonl(&mut reader)?
    } else {
        read_gsrd(&mut reader)?
    };
    ds.validate(opts)?;
    Ok(ds)
}

/// Save a dataset; extension sniffing mirrors `load_dataset`.
///
/// GSRD stores floats as f32, so a dataset whose values are f32-representable
/// round-trips bit-exactly.
pub fn save_dataset(ds: &DemoDataset, path: &Path) -> DataResult<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        write_jsonl(ds, &mut writer)?;
    } else {
        write_gsrd(ds, &mut writer)?;
    }
    writer.flush()?;
    Ok(())
}

/// Exact on-disk size in bytes of a dataset in GSRD v1 form.
pub fn gsrd_file_size(ds: &DemoDataset) -> usize {
    let header = 4 + 4 + 4 + 4 + 4;
    let per_traj: usize = ds
        .trajectories
        .iter()
        .map(|t| 4 + 1 + t.steps.len() * (ds.embedding_dim + ds.action_dim) * 4)
        .sum();
    header + per_traj
}

fn read_u32(r: &mut impl Read, what: &str) -> DataResult<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| DataError::MalformedFile(format!("truncated while reading {what}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_gsrd(r: &mut impl Read) -> DataResult<DemoDataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| DataError::MalformedFile("file shorter than magic".into()))?;
    if &magic != GSRD_MAGIC {
        return Err(DataError::MalformedFile(format!(
            "bad magic {:?}, expected \"GSRD\"",
            magic
        )));
    }
    let version = read_u32(r, "version")?;
    if version != GSRD_VERSION {
        return Err(DataError::MalformedFile(format!(
            "unsupported version {version}"
        )));
    }
    let dim = read_u32(r, "embedding dim")? as usize;
    let adim = read_u32(r, "action dim")? as usize;
    let n_traj = read_u32(r, "trajectory count")? as usize;

    let mut trajectories = Vec::with_capacity(n_traj);
    for ti in 0..n_traj {
        let n_steps = read_u32(r, "step count")? as usize;
        let mut success = [0u8; 1];
        r.read_exact(&mut success)
            .map_err(|_| DataError::MalformedFile(format!("trajectory {ti}: truncated flag")))?;
        let success = match success[0] {
            0 => false,
            1 => true,
            other => {
                return Err(DataError::MalformedFile(format!(
                    "trajectory {ti}: success flag {other} not in {{0,1}}"
                )))
            }
        };
        let floats_per_step = dim + adim;
        let mut raw = vec![0u8; n_steps * floats_per_step * 4];
        r.read_exact(&mut raw).map_err(|_| {
            DataError::MalformedFile(format!("trajectory {ti}: truncated step payload"))
        })?;
        let mut steps = Vec::with_capacity(n_steps);
        for si in 0..n_steps {
            let base = si * floats_per_step * 4;
            let mut embedding = Vec::with_capacity(dim);
            let mut action = Vec::with_capacity(adim);
            for k in 0..floats_per_step {
                let off = base + k * 4;
                let bits = [raw[off], raw[off + 1], raw[off + 2], raw[off + 3]];
                let v = f32::from_le_bytes(bits) as f64;
                if k < dim {
                    embedding.push(v);
                } else {
                    action.push(v);
                }
            }
            steps.push(Step {
                embedding,
                action,
                raw_index: si,
            });
        }
        trajectories.push(Trajectory { steps, success });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(DataError::MalformedFile(
            "trailing bytes after last trajectory".into(),
        ));
    }
    Ok(DemoDataset {
        trajectories,
        embedding_dim: dim,
        action_dim: adim,
        metadata: BTreeMap::new(),
    })
}

fn write_gsrd(ds: &DemoDataset, w: &mut impl Write) -> DataResult<()> {
    w.write_all(GSRD_MAGIC)?;
    w.write_all(&GSRD_VERSION.to_le_bytes())?;
    w.write_all(&(ds.embedding_dim as u32).to_le_bytes())?;
    w.write_all(&(ds.action_dim as u32).to_le_bytes())?;
    w.write_all(&(ds.trajectories.len() as u32).to_le_bytes())?;
    for traj in &ds.trajectories {
        w.write_all(&(traj.steps.len() as u32).to_le_bytes())?;
        w.write_all(&[u8::from(traj.success)])?;
        for step in &traj.steps {
            for x in &step.embedding {
                w.write_all(&(*x as f32).to_le_bytes())?;
            }
            for x in &step.action {
                w.write_all(&(*x as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct JsonlTrajectory {
    success: bool,
    embeddings: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
}

fn read_jsonl(r: &mut impl BufRead) -> DataResult<DemoDataset> {
    let mut trajectories = Vec::new();
    let mut dim = None;
    let mut adim = None;
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonlTrajectory = serde_json::from_str(&line)
            .map_err(|e| DataError::MalformedFile(format!("line {}: {e}", ln + 1)))?;
        if parsed.embeddings.len() != parsed.actions.len() {
            return Err(DataError::MalformedFile(format!(
                "line {}: {} embeddings but {} actions",
                ln + 1,
                parsed.embeddings.len(),
                parsed.actions.len()
            )));
        }
        // Dims come from the first line; validate() reports any later mismatch.
        dim.get_or_insert_with(|| parsed.embeddings.first().map_or(0, Vec::len));
        adim.get_or_insert_with(|| parsed.actions.first().map_or(0, Vec::len));
        let steps = parsed
            .embeddings
            .into_iter()
            .zip(parsed.actions)
            .enumerate()
            .map(|(si, (embedding, action))| Step {
                embedding,
                action,
                raw_index: si,
            })
            .collect();
        trajectories.push(Trajectory {
            steps,
            success: parsed.success,
        });
    }
    Ok(DemoDataset {
        trajectories,
        embedding_dim: dim.unwrap_or(0),
        action_dim: adim.unwrap_or(0),
        metadata: BTreeMap::new(),
    })
}

fn write_jsonl(ds: &DemoDataset, w: &mut impl Write) -> DataResult<()> {
    for traj in &ds.trajectories {
        let row = JsonlTrajectory {
            success: traj.success,
            embeddings: traj.steps.iter().map(|s| s.embedding.clone()).collect(),
            actions: traj.steps.iter().map(|s| s.action.clone()).collect(),
        };
        serde_json::to_writer(&mut *w, &row)
            .map_err(|e| DataError::MalformedFile(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Concatenate per-step embeddings of several structurally identical datasets
/// (one per camera/view). Actions and success flags are taken from the first
/// part; the output embedding dim is the sum of the parts' dims.
pub fn concat_embeddings(parts: &[DemoDataset]) -> DataResult<DemoDataset> {
    let first = parts
        .first()
        .ok_or_else(|| DataError::StructureMismatch("no parts given".into()))?;
    for (pi, part) in parts.iter().enumerate().skip(1) {
        if part.trajectories.len() != first.trajectories.len() {
            return Err(DataError::StructureMismatch(format!(
                "part {pi} has {} trajectories, part 0 has {}",
                part.trajectories.len(),
                first.trajectories.len()
            )));
        }
        if part.action_dim != first.action_dim {
            return Err(DataError::StructureMismatch(format!(
                "part {pi} action dim {} differs from part 0 ({})",
                part.action_dim, first.action_dim
            )));
        }
        for (ti, (a, b)) in first.trajectories.iter().zip(&part.trajectories).enumerate() {
            if a.steps.len() != b.steps.len() {
                return Err(DataError::StructureMismatch(format!(
                    "trajectory {ti}: part {pi} has {} steps, part 0 has {}",
                    b.steps.len(),
                    a.steps.len()
                )));
            }
        }
    }
    let dim_out: usize = parts.iter().map(|p| p.embedding_dim).sum();
    let trajectories = first
        .trajectories
        .iter()
        .enumerate()
        .map(|(ti, traj)| Trajectory {
            success: traj.success,
            steps: traj
                .steps
                .iter()
                .enumerate()
                .map(|(si, step)| {
                    let mut embedding = Vec::with_capacity(dim_out);
                    for part in parts {
                        embedding.extend_from_slice(&part.trajectories[ti].steps[si].embedding);
                    }
                    Step {
                        embedding,
                        action: step.action.clone(),
                        raw_index: si,
                    }
                })
                .collect(),
        })
        .collect();
    Ok(DemoDataset {
        trajectories,
        embedding_dim: dim_out,
        action_dim: first.action_dim,
        metadata: first.metadata.clone(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quantize(x: f64) -> f64 {
        (x as f32) as f64
    }

    pub(crate) fn random_dataset(seed: u64, dim: usize, adim: usize, n_traj: usize) -> DemoDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajectories = (0..n_traj)
            .map(|_| {
                let len = rng.gen_range(2..=12);
                Trajectory {
                    success: true,
                    steps: (0..len)
                        .map(|si| Step {
                            embedding: (0..dim).map(|_| quantize(rng.gen_range(-3.0..3.0))).collect(),
                            action: (0..adim).map(|_| quantize(rng.gen_range(-1.0..1.0))).collect(),
                            raw_index: si,
                        })
                        .collect(),
                }
            })
            .collect();
        DemoDataset::new(trajectories, dim, adim, LoadOptions::default()).unwrap()
    }

    #[test]
    fn minimal_valid_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mini.gsrd");
        let ds = DemoDataset::new(
            vec![Trajectory {
                success: true,
                steps: vec![
                    Step { embedding: vec![0.0, 1.0], action: vec![0.5], raw_index: 0 },
                    Step { embedding: vec![1.0, 1.0], action: vec![0.0], raw_index: 1 },
                ],
            }],
            2,
            1,
            LoadOptions::default(),
        )
        .unwrap();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.trajectories.len(), 1);
        assert_eq!(back.trajectories[0].last_raw_index(), 1);
        assert_eq!(back, ds);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ds = DemoDataset {
            trajectories: vec![Trajectory {
                success: true,
                steps: vec![
                    Step { embedding: vec![0.0, 1.0], action: vec![0.5], raw_index: 0 },
                    Step { embedding: vec![1.0, 1.0, 2.0], action: vec![0.0], raw_index: 1 },
                ],
            }],
            embedding_dim: 3,
            action_dim: 1,
            metadata: BTreeMap::new(),
        };
        match ds.validate(LoadOptions::default()) {
            Err(DataError::DimensionMismatch { traj: 0, step: 0, got: 2, want: 3, .. }) => {}
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_carries_location() {
        let mut ds = random_dataset(3, 2, 1, 2);
        ds.trajectories[1].steps[1].action[0] = f64::NAN;
        match ds.validate(LoadOptions::default()) {
            Err(DataError::NonFinite { traj: 1, step: 1, kind: VectorKind::Action, component: 0 }) => {}
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_truncation_are_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.gsrd");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_dataset(&path), Err(DataError::MalformedFile(_))));

        let ds = random_dataset(1, 2, 1, 1);
        let ok = dir.path().join("ok.gsrd");
        save_dataset(&ds, &ok).unwrap();
        let bytes = std::fs::read(&ok).unwrap();
        let cut = dir.path().join("cut.gsrd");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_dataset(&cut), Err(DataError::MalformedFile(_))));
    }

    #[test]
    fn empty_and_failure_datasets_are_rejected() {
        let ds = DemoDataset {
            trajectories: vec![],
            embedding_dim: 2,
            action_dim: 1,
            metadata: BTreeMap::new(),
        };
        assert!(matches!(ds.validate(LoadOptions::default()), Err(DataError::EmptyDataset)));

        let mut ds = random_dataset(2, 2, 1, 2);
        ds.trajectories[0].success = false;
        assert!(matches!(
            ds.validate(LoadOptions::default()),
            Err(DataError::FailureNotAllowed { traj: 0 })
        ));
        assert!(ds.validate(LoadOptions { allow_failures: true }).is_ok());
    }

    #[test]
    fn save_to_unwritable_path_is_io_failure() {
        let ds = random_dataset(4, 2, 1, 1);
        let err = save_dataset(&ds, Path::new("/nonexistent-dir/x.gsrd")).unwrap_err();
        assert!(matches!(err, DataError::IoFailure(_)));
    }

    #[test]
    fn round_trip_random_datasets() {
        let dir = tempfile::tempdir().unwrap();
        for seed in 0..40u64 {
            let ds = random_dataset(seed, 1 + (seed as usize % 5), 1 + (seed as usize % 3), 1 + (seed as usize % 6));
            let path = if seed % 2 == 0 {
                dir.path().join(format!("d{seed}.gsrd"))
            } else {
                dir.path().join(format!("d{seed}.jsonl"))
            };
            save_dataset(&ds, &path).unwrap();
            let back = load_dataset(&path).unwrap();
            assert_eq!(back, ds, "seed {seed}");
        }
    }

    #[test]
    fn gsrd_size_formula_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = random_dataset(7, 3, 2, 9);
        let path = dir.path().join("sized.gsrd");
        save_dataset(&ds, &path).unwrap();
        let meta = std::fs::metadata(&path).unwrap();
        assert_eq!(meta.len() as usize, gsrd_file_size(&ds));
    }

    #[test]
    fn concat_embeddings_orders_and_preserves() {
        let a = random_dataset(11, 2, 1, 3);
        let mut b = a.clone();
        b.embedding_dim = 3;
        for t in &mut b.trajectories {
            for s in &mut t.steps {
                s.embedding = vec![9.0; 3];
            }
        }
        let out = concat_embeddings(&[a.clone(), b]).unwrap();
        assert_eq!(out.embedding_dim, 5);
        for (ta, to) in a.trajectories.iter().zip(&out.trajectories) {
            for (sa, so) in ta.steps.iter().zip(&to.steps) {
                assert_eq!(&so.embedding[..2], &sa.embedding[..]);
                assert_eq!(&so.embedding[2..], &[9.0, 9.0, 9.0]);
                assert_eq!(so.action, sa.action);
            }
        }

        let single = concat_embeddings(&[a.clone()]).unwrap();
        assert_eq!(single, a);

        let mut short = a.clone();
        short.trajectories[0].steps.pop();
        assert!(matches!(
            concat_embeddings(&[a, short]),
            Err(DataError::StructureMismatch(_))
        ));
    }
}
