//! Dataset manifest: a CSV mapping frame ids to poses and optional sensor
//! payload paths. Payload paths are stored relative to the manifest's
//! directory.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{AprError, Result};
use crate::geometry::{Pose, Quat};

pub const MANIFEST_HEADER: &str = "frame,x,y,z,qw,qx,qy,qz,image,cloud";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub frame: String,
    pub pose: Pose,
    /// Relative image path; None when the cell is empty.
    pub image: Option<PathBuf>,
    /// Relative cloud path; None when the cell is empty.
    pub cloud: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory payload paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> AprError {
    AprError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_coord(field: &str, name: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("{name} is not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{name} is not finite")));
    }
    Ok(v)
}

/// Load and validate a manifest. Every referenced payload file must exist
/// relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| AprError::io(path, e))?;
    let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut lines = text.lines().enumerate();

    match lines.next() {
        Some((_, header)) if header.trim_end() == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(parse_err(
                1,
                format!("bad header {header:?}, expected {MANIFEST_HEADER:?}"),
            ))
        }
        None => return Err(parse_err(1, "empty manifest")),
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 10 {
            return Err(parse_err(
                line,
                format!("expected 10 fields, got {}", fields.len()),
            ));
        }
        let frame = fields[0].trim().to_string();
        if frame.is_empty() {
            return Err(parse_err(line, "empty frame id"));
        }
        if !seen.insert(frame.clone()) {
            return Err(parse_err(line, format!("duplicate frame id {frame:?}")));
        }
        let x = parse_coord(fields[1], "x", line)?;
        let y = parse_coord(fields[2], "y", line)?;
        let z = parse_coord(fields[3], "z", line)?;
        let qw = parse_coord(fields[4], "qw", line)?;
        let qx = parse_coord(fields[5], "qx", line)?;
        let qy = parse_coord(fields[6], "qy", line)?;
        let qz = parse_coord(fields[7], "qz", line)?;
        let pose = Pose::new([x, y, z], Quat::new(qw, qx, qy, qz))
            .map_err(|e| parse_err(line, e.to_string()))?;

        let payload = |field: &str| -> Option<PathBuf> {
            let t = field.trim();
            (!t.is_empty()).then(|| PathBuf::from(t))
        };
        let image = payload(fields[8]);
        let cloud = payload(fields[9]);
        for rel in [&image, &cloud].into_iter().flatten() {
            let full = root.join(rel);
            if !full.exists() {
                return Err(parse_err(
                    line,
                    format!("referenced payload {} does not exist", full.display()),
                ));
            }
        }
        records.push(ManifestRecord {
            frame,
            pose,
            image,
            cloud,
        });
    }
    Ok(DatasetManifest { root, records })
}

/// Write a manifest. Coordinates print with enough digits to parse back
/// to the identical f64, so load, save, load is a fixed point.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in &manifest.records {
        let q = r.pose.orientation;
        let opt = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.frame,
            r.pose.position[0],
            r.pose.position[1],
            r.pose.position[2],
            q.w,
            q.x,
            q.y,
            q.z,
            opt(&r.image),
            opt(&r.cloud),
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| AprError::io(path, e))
}
