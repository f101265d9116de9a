//! On-disk formats: JSON documents with a reproducibility header, weight
//! files, checkpoints and CSV logs.
//!
//! Floats are written in their shortest form that parses back to the same
//! bits, so a save→load→save cycle is byte-identical.

use ncbf_core::nn::MlpDocument;
use ncbf_core::sampling::Dataset;
use ncbf_core::trainer::{EpochRecord, TrainState};
use ncbf_core::verify::Trajectory;
use ncbf_core::{Mlp, Nets};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const TOOLKIT: &str = concat!("ncbf ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: corrupt or invalid file: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },
    #[error("{}: schema version {found} is not supported (expected {expected})", path.display())]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{}: digest {found} does not match the recorded {expected}", path.display())]
    DigestMismatch { path: PathBuf, found: String, expected: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FileError + '_ {
    move |source| FileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Toolkit version and the digest of the configuration that produced a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub toolkit: String,
    pub config_digest: String,
}

impl Header {
    pub fn new(config_digest: String) -> Self {
        Self {
            toolkit: TOOLKIT.to_string(),
            config_digest,
        }
    }

    /// Comment lines for CSV and SVG outputs.
    pub fn comment_lines(&self) -> String {
        format!("# {}\n# config {}\n", self.toolkit, self.config_digest)
    }
}

pub fn digest(bytes: &[u8]) -> String {
    format!("sha256:{:x}", Sha256::digest(bytes))
}

/// Digest over several byte strings, each length-prefixed.
pub fn digest_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    format!("sha256:{:x}", h.finalize())
}

pub fn file_digest(path: &Path) -> Result<String, FileError> {
    Ok(digest(&fs::read(path).map_err(io_err(path))?))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, FileError> {
    fs::read(path).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FileError> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| FileError::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    bytes
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FileError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FileError> {
    write_bytes(path, &to_json_bytes(value))
}

/// A JSON document carrying a [`Header`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub header: Header,
    #[serde(flatten)]
    pub body: T,
}

pub const WEIGHT_FILES: [&str; 3] = ["barrier.json", "controller.json", "observer.json"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsBody {
    pub role: String,
    pub network: MlpDocument,
}

/// Writes the three weight files into `dir` and returns their digests keyed
/// by file name.
pub fn write_weights(dir: &Path, nets: &Nets, header: &Header) -> Result<BTreeMap<String, String>, FileError> {
    let mut digests = BTreeMap::new();
    for (file, net) in WEIGHT_FILES.iter().zip(nets.nets()) {
        let doc = Stamped {
            header: header.clone(),
            body: WeightsBody {
                role: file.trim_end_matches(".json").to_string(),
                network: MlpDocument::from(net.clone()),
            },
        };
        let bytes = to_json_bytes(&doc);
        write_bytes(&dir.join(file), &bytes)?;
        digests.insert(file.to_string(), digest(&bytes));
    }
    Ok(digests)
}

/// Reads the three weight files from `dir`, with their digests.
pub fn read_weights(dir: &Path) -> Result<(Nets, BTreeMap<String, String>), FileError> {
    let mut nets = Vec::with_capacity(3);
    let mut digests = BTreeMap::new();
    for file in WEIGHT_FILES {
        let path = dir.join(file);
        let bytes = read_bytes(&path)?;
        let doc: Stamped<WeightsBody> = serde_json::from_slice(&bytes).map_err(|e| FileError::Corrupt {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let net = Mlp::try_from(doc.body.network).map_err(|e| FileError::Corrupt {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        nets.push(net);
        digests.insert(file.to_string(), digest(&bytes));
    }
    let observer = nets.pop().unwrap();
    let controller = nets.pop().unwrap();
    let barrier = nets.pop().unwrap();
    Ok((
        Nets {
            barrier,
            controller,
            observer,
        },
        digests,
    ))
}

pub type Checkpoint = Stamped<CheckpointBody>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBody {
    pub state: TrainState,
}

pub fn write_checkpoint(path: &Path, state: &TrainState, header: &Header) -> Result<(), FileError> {
    write_json(
        path,
        &Checkpoint {
            header: header.clone(),
            body: CheckpointBody { state: state.clone() },
        },
    )
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, FileError> {
    read_json(path)
}

fn csv_writer(path: &Path, header: &Header) -> Result<csv::Writer<fs::File>, FileError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(header.comment_lines().as_bytes()).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> FileError + '_ {
    move |e| FileError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

fn num(v: f64) -> String {
    // Shortest round-trip form; `inf`/`NaN` spelled the way most readers accept.
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

pub const LOSS_COLUMNS: [&str; 13] = [
    "epoch", "l1", "l2", "l3", "l4", "l_cbf", "l_obs", "l_p", "eta", "l_max", "max_q1", "max_q2", "max_q3",
];

pub fn write_loss_csv(path: &Path, header: &Header, history: &[EpochRecord]) -> Result<(), FileError> {
    let mut w = csv_writer(path, header)?;
    let err = csv_err(path);
    w.write_record(LOSS_COLUMNS).map_err(&err)?;
    for r in history {
        let l = &r.losses;
        let mut row = vec![r.epoch.to_string()];
        row.extend([l.l1, l.l2, l.l3, l.l4, l.l_cbf, l.l_obs, l.l_p, l.eta, r.l_max].map(num));
        row.extend(l.max_q.map(num));
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Parsed loss history: column name to values.
pub fn read_csv_columns(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, FileError> {
    let corrupt = |reason: String| FileError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| corrupt(e.to_string()))?;
    let names: Vec<String> = r.headers().map_err(|e| corrupt(e.to_string()))?.iter().map(String::from).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| corrupt(e.to_string()))?;
        for (i, field) in rec.iter().enumerate() {
            let v = match field {
                "true" => 1.0,
                "false" => 0.0,
                f => f.parse::<f64>().map_err(|e| corrupt(format!("`{f}`: {e}")))?,
            };
            cols[i].push(v);
        }
    }
    Ok(names.into_iter().zip(cols).collect())
}

pub fn write_dataset_csv(path: &Path, header: &Header, ds: &Dataset) -> Result<(), FileError> {
    let mut w = csv_writer(path, header)?;
    let err = csv_err(path);
    let n = ds.state_dim();
    let mut names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    names.extend((1..=n).map(|i| format!("xhat{i}")));
    names.extend(["init".into(), "unsafe".into()]);
    w.write_record(&names).map_err(&err)?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.point(i).iter().map(|&v| num(v)).collect();
        row.push(ds.is_init(i).to_string());
        row.push(ds.is_unsafe(i).to_string());
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_trajectory_csv(path: &Path, header: &Header, traj: &Trajectory) -> Result<(), FileError> {
    let mut w = csv_writer(path, header)?;
    let err = csv_err(path);
    let (n, m) = (traj.state_dim, traj.input_dim);
    let mut names = vec!["t".to_string()];
    names.extend((1..=n).map(|i| format!("x{i}")));
    names.extend((1..=n).map(|i| format!("xhat{i}")));
    names.extend((1..=m).map(|i| format!("u{i}")));
    names.extend(["barrier", "residual", "safe"].map(String::from));
    w.write_record(&names).map_err(&err)?;
    for k in 0..traj.len() {
        let mut row = vec![num(traj.time[k])];
        row.extend(traj.x(k).iter().chain(traj.xhat(k)).chain(traj.input(k)).map(|&v| num(v)));
        row.push(num(traj.barrier[k]));
        row.push(num(traj.residual[k]));
        row.push(traj.safe[k].to_string());
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(io_err(path))
}
