use std::fs;
use std::path::{Path, PathBuf};

use super::{EcgError, EcgRecord, RhythmLabel, ShardId};

const HEADER: [&str; 5] = ["record_id", "path", "fs", "label", "shard"];

/// Records in manifest order, with the declared shard of each.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub records: Vec<EcgRecord>,
    pub assignment: Vec<(String, ShardId)>,
}

fn ingest(id: &str, reason: impl Into<String>) -> EcgError {
    EcgError::Ingest {
        id: id.to_string(),
        reason: reason.into(),
    }
}

/// Reads a `record_id,path,fs,label,shard` CSV and the raw little-endian f32
/// signal files it references. Relative paths resolve against the manifest's
/// directory.
pub fn load_manifest(path: &Path) -> Result<Manifest, EcgError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(HEADER) {
        return Err(EcgError::Manifest {
            line: 1,
            reason: format!("expected header {}, found {}", HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Manifest {
        records: Vec::new(),
        assignment: Vec::new(),
    };
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        if row.len() != HEADER.len() {
            return Err(EcgError::Manifest {
                line,
                reason: format!("expected {} fields, found {}", HEADER.len(), row.len()),
            });
        }
        let id = &row[0];
        if id.is_empty() {
            return Err(EcgError::Manifest {
                line,
                reason: "empty record_id".into(),
            });
        }
        let fs: u32 = row[2].parse().map_err(|_| ingest(id, format!("bad sample rate {:?}", &row[2])))?;
        if fs != 200 && fs != 300 {
            return Err(ingest(id, format!("unsupported sample rate {fs} Hz")));
        }
        let label: RhythmLabel = row[3].parse().map_err(|e: String| ingest(id, e))?;
        let shard: ShardId = row[4].parse().map_err(|e: String| ingest(id, e))?;
        let signal_path = base.join(&row[1]);
        let bytes = fs::read(&signal_path).map_err(|e| ingest(id, format!("cannot read {}: {e}", signal_path.display())))?;
        if bytes.is_empty() {
            return Err(ingest(id, "empty signal file"));
        }
        if bytes.len() % 4 != 0 {
            return Err(ingest(id, format!("length mismatch: {} bytes is not a whole number of f32 samples", bytes.len())));
        }
        let samples = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.assignment.push((id.to_string(), shard));
        out.records.push(EcgRecord {
            id: id.to_string(),
            fs,
            samples,
            label,
        });
    }
    Ok(out)
}

/// Writes `manifest.csv` and one `signals/<id>.f32` file per record under
/// `dir`; returns the manifest path.
pub fn write_manifest(dir: &Path, entries: &[(&EcgRecord, ShardId)]) -> Result<PathBuf, EcgError> {
    let signals = dir.join("signals");
    fs::create_dir_all(&signals)?;
    let manifest_path = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest_path)?;
    w.write_record(HEADER)?;
    for (rec, shard) in entries {
        let rel = format!("signals/{}.f32", rec.id);
        let mut bytes = Vec::with_capacity(rec.samples.len() * 4);
        for v in &rec.samples {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(&rel), bytes)?;
        w.write_record([rec.id.as_str(), rel.as_str(), &rec.fs.to_string(), rec.label.name(), &shard.to_string()])?;
    }
    w.flush()?;
    Ok(manifest_path)
}
