use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Handedness, Skeleton};
use crate::Error;

/// On-disk skeleton: `{"units":"mm","handedness":"right","joints":[[x,y,z], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonFile {
    pub units: String,
    pub handedness: Handedness,
    pub joints: Vec<[f64; 3]>,
}

impl SkeletonFile {
    pub fn from_skeleton(s: &Skeleton) -> Self {
        SkeletonFile {
            units: "mm".into(),
            handedness: s.handedness(),
            joints: s.original_joints(),
        }
    }

    pub fn to_skeleton(&self) -> Result<Skeleton, Error> {
        if self.units != "mm" {
            return Err(Error::Format(format!(
                "unsupported units {:?}, expected \"mm\"",
                self.units
            )));
        }
        Ok(Skeleton::new(&self.joints, self.handedness)?)
    }
}

pub fn read_skeleton_json(path: &Path) -> Result<Skeleton, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SkeletonFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    file.to_skeleton()
}

/// 21 rows of `x,y,z`; an optional non-numeric header line is skipped.
/// CSV skeletons are right hands.
pub fn read_skeleton_csv(path: &Path) -> Result<Skeleton, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut joints = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == 3 => joints.push([v[0], v[1], v[2]]),
            Err(_) if lineno == 0 => continue,
            _ => {
                return Err(Error::parse(
                    path,
                    format!("line {}: expected three numbers", lineno + 1),
                ))
            }
        }
    }
    Ok(Skeleton::new(&joints, Handedness::Right)?)
}

/// Dispatches on extension: `.csv` or JSON otherwise.
pub fn read_skeleton(path: &Path) -> Result<Skeleton, Error> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_skeleton_csv(path),
        _ => read_skeleton_json(path),
    }
}

pub fn write_skeleton_json(path: &Path, s: &Skeleton) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(&SkeletonFile::from_skeleton(s))
        .map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
