//! Columnar container files for pose sequences and checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"VBPOSE01" (pose sequence) or b"VBCKPT01" (checkpoint)
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON:
//!              { "meta": {...}, "columns": [{"name", "shape", "dtype"}, ...] }
//! columns      raw array data in header order, row-major (C order),
//!              dtype "f64le" (8 bytes/elem) or "f32le" (4 bytes/elem)
//! ```
//!
//! Pose-sequence meta: `frames`, `joints`, `frame_rate`, `camera` (`{fx, fy,
//! u0, v0}` or null), `camera_id`, `subject`, `action`. Columns: `joints2d`
//! `[T, J, 2]` pixels and/or `joints3d` `[T, J, 3]` mm, both `f64le`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PoseSequence};
use crate::Scalar;

pub const POSE_MAGIC: &[u8; 8] = b"VBPOSE01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VBCKPT01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "f64le")]
    F64,
    #[serde(rename = "f32le")]
    F32,
}

impl DType {
    pub fn of<T: Scalar>() -> Self {
        if std::mem::size_of::<T>() == 4 {
            DType::F32
        } else {
            DType::F64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

impl ColumnSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    columns: Vec<ColumnSpec>,
}

/// Decoded container: metadata plus named columns (values widened to `f64`).
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: Value,
    pub columns: Vec<(ColumnSpec, Vec<f64>)>,
}

impl Container {
    pub fn column(&self, name: &str) -> Option<&(ColumnSpec, Vec<f64>)> {
        self.columns.iter().find(|(c, _)| c.name == name)
    }
}

pub fn write_container(
    path: &Path,
    magic: &[u8; 8],
    meta: Value,
    columns: &[(ColumnSpec, &[f64])],
) -> Result<()> {
    let io = |e| Error::io(path, e);
    for (spec, data) in columns {
        if spec.len() != data.len() {
            return Err(Error::Format(format!(
                "column {} has {} values for shape {:?}",
                spec.name,
                data.len(),
                spec.shape
            )));
        }
    }
    let header = Header {
        meta,
        columns: columns.iter().map(|(c, _)| c.clone()).collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(magic).map_err(io)?;
    w.write_u64::<LittleEndian>(header_bytes.len() as u64).map_err(io)?;
    w.write_all(&header_bytes).map_err(io)?;
    for (spec, data) in columns {
        match spec.dtype {
            DType::F64 => {
                for &x in *data {
                    w.write_f64::<LittleEndian>(x).map_err(io)?;
                }
            }
            DType::F32 => {
                for &x in *data {
                    w.write_f32::<LittleEndian>(x as f32).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_container(path: &Path, magic: &[u8; 8]) -> Result<Container> {
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut got = [0u8; 8];
    r.read_exact(&mut got).map_err(io)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let len = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut header_bytes = vec![0u8; len];
    r.read_exact(&mut header_bytes).map_err(io)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    let mut columns = Vec::with_capacity(header.columns.len());
    for spec in header.columns {
        let n = spec.len();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let x = match spec.dtype {
                DType::F64 => r.read_f64::<LittleEndian>(),
                DType::F32 => r.read_f32::<LittleEndian>().map(f64::from),
            }
            .map_err(io)?;
            data.push(x);
        }
        columns.push((spec, data));
    }
    Ok(Container {
        meta: header.meta,
        columns,
    })
}

/// Labels stored alongside a pose sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub subject: String,
    pub action: String,
    pub camera_id: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct PoseMetaJson {
    frames: usize,
    joints: usize,
    frame_rate: f64,
    camera: Option<CameraIntrinsics<f64>>,
    camera_id: Option<String>,
    subject: String,
    action: String,
}

fn to_f64_vec<T: Scalar>(a: &Array3<T>) -> Vec<f64> {
    a.iter().map(|x| x.as_f64()).collect()
}

pub fn write_pose_sequence<T: Scalar>(
    path: &Path,
    seq: &PoseSequence<T>,
    meta: &SequenceMeta,
) -> Result<()> {
    seq.validate()?;
    let (t, j) = (seq.num_frames(), seq.num_joints());
    let header = PoseMetaJson {
        frames: t,
        joints: j,
        frame_rate: seq.frame_rate,
        camera: seq.camera.map(|c| c.cast()),
        camera_id: meta.camera_id.clone(),
        subject: meta.subject.clone(),
        action: meta.action.clone(),
    };
    let j2 = seq.joints2d.as_ref().map(to_f64_vec);
    let j3 = seq.joints3d.as_ref().map(to_f64_vec);
    let mut cols: Vec<(ColumnSpec, &[f64])> = Vec::new();
    if let Some(d) = &j2 {
        cols.push((
            ColumnSpec {
                name: "joints2d".into(),
                shape: vec![t, j, 2],
                dtype: DType::F64,
            },
            d,
        ));
    }
    if let Some(d) = &j3 {
        cols.push((
            ColumnSpec {
                name: "joints3d".into(),
                shape: vec![t, j, 3],
                dtype: DType::F64,
            },
            d,
        ));
    }
    write_container(path, POSE_MAGIC, serde_json::to_value(header)?, &cols)
}

pub fn read_pose_sequence<T: Scalar>(path: &Path) -> Result<(PoseSequence<T>, SequenceMeta)> {
    let c = read_container(path, POSE_MAGIC)?;
    let meta: PoseMetaJson = serde_json::from_value(c.meta.clone())?;
    let load = |name: &str, width: usize| -> Result<Option<Array3<T>>> {
        match c.column(name) {
            None => Ok(None),
            Some((spec, data)) => {
                if spec.shape != [meta.frames, meta.joints, width] {
                    return Err(Error::Format(format!(
                        "{}: column {name} has shape {:?}",
                        path.display(),
                        spec.shape
                    )));
                }
                let arr = Array3::from_shape_vec(
                    (meta.frames, meta.joints, width),
                    data.iter().map(|&x| T::lit(x)).collect(),
                )
                .map_err(|e| Error::Format(e.to_string()))?;
                Ok(Some(arr))
            }
        }
    };
    let seq = PoseSequence {
        joints2d: load("joints2d", 2)?,
        joints3d: load("joints3d", 3)?,
        camera: meta.camera.map(|c| c.cast()),
        frame_rate: meta.frame_rate,
    };
    seq.validate()?;
    Ok((
        seq,
        SequenceMeta {
            subject: meta.subject,
            action: meta.action,
            camera_id: meta.camera_id,
        },
    ))
}
