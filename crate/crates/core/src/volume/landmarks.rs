use std::path::Path;

use super::LandmarkSet;
use crate::error::{Error, Result};

/// One `x,y,z` line per point (mm), no header.
pub fn write_landmarks_csv(set: &LandmarkSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for p in &set.points {
        w.write_record(p.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_landmarks_csv(path: impl AsRef<Path>, frame: impl Into<String>) -> Result<LandmarkSet> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut points = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Format(format!(
                "landmark line {}: expected 3 fields, got {}",
                line + 1,
                rec.len()
            )));
        }
        let mut p = [0.0; 3];
        for (slot, field) in p.iter_mut().zip(rec.iter()) {
            *slot = field
                .parse()
                .map_err(|e| Error::Format(format!("landmark line {}: {e}", line + 1)))?;
        }
        points.push(p);
    }
    Ok(LandmarkSet::new(points, frame))
}
