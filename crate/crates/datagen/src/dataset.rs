//! Line-oriented dataset files.
//!
//! The first line is a JSON manifest. Every following line is one record:
//! the sample id and source seed, then the values of each field listed in
//! the manifest, in order, separated by single spaces. Reals are written with
//! 17 significant digits so that reading them back is exact.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::geometry::EgoPose;
use crate::keypoints::NeighborMode;
use crate::sample::{Channels, TrajectorySample, POSE_DIM};
use crate::scene::{SceneMode, SCENE_DIM};

pub const FORMAT_NAME: &str = "cxa-trajectories";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub name: String,
    /// Values per record.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub split: String,
    pub count: usize,
    pub t_obs: usize,
    pub t_pred: usize,
    pub neighbor_modes: Vec<NeighborMode>,
    pub scene_modes: Vec<SceneMode>,
    pub fields: Vec<FieldSpec>,
    pub master_seed: u64,
    /// SHA-256 of the generator configuration.
    pub config_digest: String,
}

fn neighbor_field(mode: NeighborMode) -> String {
    format!("neighbors_{}", mode.name())
}

fn scene_field(mode: SceneMode) -> String {
    format!("scene_{}", mode.name())
}

impl DatasetManifest {
    pub fn new(
        split: impl Into<String>,
        count: usize,
        t_obs: usize,
        t_pred: usize,
        channels: &Channels,
        master_seed: u64,
        config_digest: impl Into<String>,
    ) -> Self {
        let mut m = Self {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            split: split.into(),
            count,
            t_obs,
            t_pred,
            neighbor_modes: channels.neighbor_modes.clone(),
            scene_modes: channels.scene_modes.clone(),
            fields: Vec::new(),
            master_seed,
            config_digest: config_digest.into(),
        };
        m.fields = m.expected_fields();
        m
    }

    pub fn channels(&self) -> Channels {
        Channels {
            neighbor_modes: self.neighbor_modes.clone(),
            scene_modes: self.scene_modes.clone(),
        }
    }

    /// The dimension table implied by the window lengths and channel modes.
    pub fn expected_fields(&self) -> Vec<FieldSpec> {
        let f = |name: String, len| FieldSpec { name, len };
        let mut v = vec![
            f("origin".into(), POSE_DIM),
            f("ego_past".into(), self.t_obs * POSE_DIM),
            f("ego_future".into(), self.t_pred * POSE_DIM),
        ];
        v.extend(self.neighbor_modes.iter().map(|&m| f(neighbor_field(m), self.t_obs * m.row_dim())));
        v.extend(self.scene_modes.iter().map(|&m| f(scene_field(m), self.t_obs * SCENE_DIM)));
        v
    }

    pub fn values_per_record(&self) -> usize {
        self.fields.iter().map(|f| f.len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT_NAME || self.version != FORMAT_VERSION {
            return Err(DataError::Malformed(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        if self.fields != self.expected_fields() {
            return Err(DataError::Malformed("dimension table disagrees with the declared modes".into()));
        }
        Ok(())
    }

    /// Checks one sample against the dimension table.
    pub fn check_sample(&self, index: usize, s: &TrajectorySample) -> Result<()> {
        let mismatch = |detail: String| Err(DataError::DimensionMismatch { index, detail });
        let check = |name: &str, got: usize, want: usize| -> Result<()> {
            if got == want {
                Ok(())
            } else {
                mismatch(format!("{name} has {got} values, expected {want}"))
            }
        };
        check("ego_past", s.ego_past.len(), self.t_obs * POSE_DIM)?;
        check("ego_future", s.ego_future.len(), self.t_pred * POSE_DIM)?;
        if s.neighbors.len() != self.neighbor_modes.len() || s.scene.len() != self.scene_modes.len() {
            return mismatch("channel set differs from the manifest".into());
        }
        for &m in &self.neighbor_modes {
            let Some(v) = s.neighbors.get(&m) else {
                return mismatch(format!("missing {}", neighbor_field(m)));
            };
            check(&neighbor_field(m), v.len(), self.t_obs * m.row_dim())?;
        }
        for &m in &self.scene_modes {
            let Some(v) = s.scene.get(&m) else {
                return mismatch(format!("missing {}", scene_field(m)));
            };
            check(&scene_field(m), v.len(), self.t_obs * SCENE_DIM)?;
        }
        Ok(())
    }
}

/// Formats a real with 17 significant digits, dropping trailing zeros of
/// the mantissa.
pub fn format_real(x: f64) -> String {
    let mut s = String::new();
    push_real(&mut s, x);
    s
}

fn push_real(out: &mut String, x: f64) {
    if x == 0.0 {
        out.push_str(if x.is_sign_negative() { "-0" } else { "0" });
        return;
    }
    let s = format!("{x:.16e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    out.push_str(mantissa);
    if exp != "0" {
        out.push('e');
        out.push_str(exp);
    }
}

pub fn write_dataset_to<W: Write>(mut w: W, manifest: &DatasetManifest, samples: &[TrajectorySample]) -> Result<()> {
    manifest.validate()?;
    if manifest.count != samples.len() {
        return Err(DataError::Malformed(format!(
            "manifest declares {} records but {} were given",
            manifest.count,
            samples.len()
        )));
    }
    let header = serde_json::to_string(manifest).map_err(|e| DataError::Malformed(e.to_string()))?;
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for (index, s) in samples.iter().enumerate() {
        manifest.check_sample(index, s)?;
        line.clear();
        write!(line, "{} {}", s.id, s.source_seed).expect("string write");
        let mut put = |vals: &[f64]| {
            for &v in vals {
                line.push(' ');
                push_real(&mut line, v);
            }
        };
        put(&s.origin.to_row());
        put(&s.ego_past);
        put(&s.ego_future);
        for m in &manifest.neighbor_modes {
            put(&s.neighbors[m]);
        }
        for m in &manifest.scene_modes {
            put(&s.scene[m]);
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, manifest: &DatasetManifest, samples: &[TrajectorySample]) -> Result<()> {
    let file = File::create(path)?;
    write_dataset_to(BufWriter::new(file), manifest, samples)
}

fn parse_record(index: usize, line: &str, manifest: &DatasetManifest) -> Result<TrajectorySample> {
    let mut tokens = line.split(' ');
    let mut next_u64 = |what: &str| -> Result<u64> {
        tokens
            .next()
            .ok_or_else(|| DataError::DimensionMismatch {
                index,
                detail: format!("missing {what}"),
            })?
            .parse()
            .map_err(|_| DataError::Malformed(format!("record {index}: bad {what}")))
    };
    let id = next_u64("id")?;
    let source_seed = next_u64("source seed")?;
    let mut values = Vec::with_capacity(manifest.values_per_record());
    for tok in tokens {
        values.push(
            tok.parse::<f64>()
                .map_err(|_| DataError::Malformed(format!("record {index}: bad number `{tok}`")))?,
        );
    }
    if values.len() != manifest.values_per_record() {
        return Err(DataError::DimensionMismatch {
            index,
            detail: format!("{} values, expected {}", values.len(), manifest.values_per_record()),
        });
    }
    let mut rest = &values[..];
    let mut take = |n: usize| {
        let (head, tail) = rest.split_at(n);
        rest = tail;
        head.to_vec()
    };
    let origin = EgoPose::from_row(&take(POSE_DIM));
    let ego_past = take(manifest.t_obs * POSE_DIM);
    let ego_future = take(manifest.t_pred * POSE_DIM);
    let neighbors = manifest
        .neighbor_modes
        .iter()
        .map(|&m| (m, take(manifest.t_obs * m.row_dim())))
        .collect();
    let scene = manifest.scene_modes.iter().map(|&m| (m, take(manifest.t_obs * SCENE_DIM))).collect();
    Ok(TrajectorySample {
        id,
        source_seed,
        origin,
        ego_past,
        ego_future,
        neighbors,
        scene,
    })
}

pub fn read_dataset_from<R: BufRead>(mut r: R) -> Result<(DatasetManifest, Vec<TrajectorySample>)> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(DataError::Truncated("missing manifest".into()));
    }
    let manifest: DatasetManifest =
        serde_json::from_str(line.trim_end()).map_err(|e| DataError::Malformed(format!("manifest: {e}")))?;
    manifest.validate()?;
    let mut samples = Vec::with_capacity(manifest.count);
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            break;
        }
        let index = samples.len();
        let Some(body) = line.strip_suffix('\n') else {
            return Err(DataError::Truncated(format!("record {index} is cut off")));
        };
        if index >= manifest.count {
            return Err(DataError::Malformed(format!(
                "more records than the {} the manifest declares",
                manifest.count
            )));
        }
        samples.push(parse_record(index, body, &manifest)?);
    }
    if samples.len() < manifest.count {
        return Err(DataError::Truncated(format!(
            "{} of {} records present",
            samples.len(),
            manifest.count
        )));
    }
    Ok((manifest, samples))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<TrajectorySample>)> {
    let file = File::open(path)?;
    read_dataset_from(BufReader::with_capacity(1 << 20, file))
}
