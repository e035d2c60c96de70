//! Line-delimited JSON manifest: one header line, then one record per clip.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::bucket::Bucket;
use crate::error::{CurationError, Result};

pub const MANIFEST_SCHEMA: &str = "vidgen-curation-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub schema: String,
    pub version: u32,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    Blurry,
    Static,
    DuplicateInSource,
    DuplicateInCluster,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub id: String,
    pub source_id: String,
    pub start: usize,
    pub end: usize,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub blur: f64,
    pub motion_fg: f64,
    pub motion_bg: f64,
    pub motion_pretrain: f64,
    pub motion_post: f64,
    pub aesthetic: f64,
    pub feature: Vec<f64>,
    pub bucket: Option<Bucket>,
    pub kept: bool,
    pub drop_reason: Option<DropReason>,
    /// In the top percentile of both aesthetic and post-training motion.
    pub post_selected: bool,
}

impl ClipRecord {
    pub fn duration_s(&self) -> f64 {
        (self.end - self.start) as f64 / self.fps
    }
}

pub fn write_manifest(records: &[ClipRecord], mut w: impl Write) -> Result<()> {
    let head = ManifestHeader { schema: MANIFEST_SCHEMA.into(), version: MANIFEST_VERSION, records: records.len() };
    let line = |v: serde_json::Result<String>| v.map_err(|e| CurationError::Manifest(e.to_string()));
    writeln!(w, "{}", line(serde_json::to_string(&head))?)?;
    for r in records {
        writeln!(w, "{}", line(serde_json::to_string(r))?)?;
    }
    Ok(())
}

pub fn read_manifest(r: impl BufRead) -> Result<Vec<ClipRecord>> {
    let mut lines = r.lines();
    let head = lines.next().ok_or_else(|| CurationError::Manifest("empty manifest".into()))??;
    let head: ManifestHeader =
        serde_json::from_str(&head).map_err(|e| CurationError::Manifest(format!("header: {e}")))?;
    if head.schema != MANIFEST_SCHEMA || head.version != MANIFEST_VERSION {
        return Err(CurationError::Manifest(format!("unsupported schema {} v{}", head.schema, head.version)));
    }
    let mut out = Vec::with_capacity(head.records);
    for (i, l) in lines.enumerate() {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&l).map_err(|e| CurationError::Manifest(format!("record {i}: {e}")))?);
    }
    if out.len() != head.records {
        return Err(CurationError::Manifest(format!("header announces {} records, found {}", head.records, out.len())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header_checks() {
        let recs = vec![
            ClipRecord { id: "a#000".into(), fps: 10.0, end: 30, kept: true, ..Default::default() },
            ClipRecord { id: "a#001".into(), fps: 10.0, drop_reason: Some(DropReason::Static), ..Default::default() },
        ];
        let mut buf = Vec::new();
        write_manifest(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"schema\":\"vidgen-curation-manifest\",\"version\":1,\"records\":2}\n{\"id\":\"a#000\""));
        assert!(text.contains("\"drop_reason\":\"static\""));
        assert_eq!(read_manifest(&buf[..]).unwrap(), recs);
        assert!(read_manifest(&b""[..]).is_err());
        let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(read_manifest(bumped.as_bytes()).is_err());
        let short: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(read_manifest(short.as_bytes()).is_err());
    }
}
