//! On-disk layout of an index directory.
//!
//! ```text
//! manifest.jsonl   one record per line, rasters referenced by relative path
//! features.bin     "MSDBFTR\0", u32 version, u64 count, u32 dim, count×dim f32 LE
//! masks/*.pgm      binary face/body masks (P5, 0 or 255)
//! refs/*.pgm       reference crops (P5)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CharacterRegion, Keypoint, MsdbError, MsdbRecord, Raster, Result, RetrievalIndex};

pub const FEATURE_BANK_MAGIC: &[u8; 8] = b"MSDBFTR\0";
pub const FEATURE_BANK_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FEATURE_FILE: &str = "features.bin";
const BANK_HEADER_LEN: usize = 8 + 4 + 8 + 4;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    id: String,
    caption: String,
    feature_row: usize,
    feature_dim: usize,
    image_size: [u32; 2],
    skeleton: Vec<Vec<Keypoint>>,
    characters: Vec<ManifestRegion>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRegion {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    face_mask: String,
    body_mask: String,
    ref_face: String,
    ref_body: String,
}

struct BankHeader {
    count: u64,
    dim: u32,
}

fn read_bank_header(bytes: &[u8], file: &Path) -> Result<BankHeader> {
    if bytes.len() < 8 || &bytes[..8] != FEATURE_BANK_MAGIC {
        return Err(MsdbError::BadMagic { file: file.into() });
    }
    if bytes.len() < BANK_HEADER_LEN {
        return Err(MsdbError::Format {
            file: file.into(),
            offset: bytes.len() as u64,
            reason: "truncated header".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FEATURE_BANK_VERSION {
        return Err(MsdbError::UnsupportedVersion {
            file: file.into(),
            found: version,
        });
    }
    Ok(BankHeader {
        count: u64::from_le_bytes(bytes[12..20].try_into().unwrap()),
        dim: u32::from_le_bytes(bytes[20..24].try_into().unwrap()),
    })
}

/// Loads and validates an index from a manifest and its feature bank.
///
/// Raster paths in the manifest resolve relative to the manifest's directory.
pub fn build_index(manifest_path: &Path, bank_path: &Path) -> Result<RetrievalIndex> {
    let bank = fs::read(bank_path).map_err(|e| MsdbError::io(bank_path, e))?;
    let header = read_bank_header(&bank, bank_path)?;

    let text = fs::read_to_string(manifest_path).map_err(|e| MsdbError::io(manifest_path, e))?;
    let mut lines = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(line).map_err(|e| MsdbError::Json {
            path: manifest_path.into(),
            line: n + 1,
            message: e.to_string(),
        })?;
        if parsed.feature_row != lines.len() {
            return Err(MsdbError::Json {
                path: manifest_path.into(),
                line: n + 1,
                message: format!("feature_row {} does not match record position", parsed.feature_row),
            });
        }
        lines.push((n + 1, parsed));
    }
    if lines.len() as u64 != header.count {
        return Err(MsdbError::CountMismatch {
            manifest: lines.len(),
            bank: header.count as usize,
        });
    }
    let dim = header.dim as usize;
    for (_, l) in &lines {
        if l.feature_dim != dim {
            return Err(MsdbError::DimensionMismatch {
                file: bank_path.into(),
                id: l.id.clone(),
                expected: l.feature_dim,
                found: dim,
            });
        }
    }
    let expected_len = BANK_HEADER_LEN as u64 + header.count * 4 * header.dim as u64;
    if bank.len() as u64 != expected_len {
        return Err(MsdbError::Format {
            file: bank_path.into(),
            offset: BANK_HEADER_LEN as u64,
            reason: format!(
                "payload is {} bytes, header declares {} rows of dimension {}",
                bank.len() - BANK_HEADER_LEN,
                header.count,
                header.dim
            ),
        });
    }
    if dim == 0 {
        return Err(MsdbError::Format {
            file: bank_path.into(),
            offset: 20,
            reason: "zero feature dimension".into(),
        });
    }

    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::with_capacity(lines.len());
    for (row, (_, l)) in lines.into_iter().enumerate() {
        let start = BANK_HEADER_LEN + 4 * dim * row;
        let feature = bank[start..start + 4 * dim]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let load = |rel: &str| Raster::read_pgm(&base.join(rel));
        let mut characters = Vec::with_capacity(l.characters.len());
        for c in &l.characters {
            characters.push(CharacterRegion {
                label: c.label,
                face_mask: load(&c.face_mask)?,
                body_mask: load(&c.body_mask)?,
                ref_face: load(&c.ref_face)?,
                ref_body: load(&c.ref_body)?,
            });
        }
        records.push(MsdbRecord {
            id: l.id,
            caption: l.caption,
            feature,
            skeleton: l.skeleton,
            characters,
            image_size: (l.image_size[0], l.image_size[1]),
        });
    }
    RetrievalIndex::from_records(records)
}

/// Loads `dir/manifest.jsonl` with `dir/features.bin`.
pub fn load_index_dir(dir: &Path) -> Result<RetrievalIndex> {
    build_index(&dir.join(MANIFEST_FILE), &dir.join(FEATURE_FILE))
}

/// Writes an index directory. Features are stored as `f32`.
pub fn save_index(index: &RetrievalIndex, dir: &Path) -> Result<()> {
    for sub in ["masks", "refs"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| MsdbError::io(&p, e))?;
    }

    let mut manifest = Vec::new();
    for (row, r) in index.records().iter().enumerate() {
        let mut regions = Vec::with_capacity(r.characters.len());
        for (k, c) in r.characters.iter().enumerate() {
            let rel = |kind: &str, sub: &str| format!("{sub}/{row:06}_r{k}_{kind}.pgm");
            let entry = ManifestRegion {
                label: c.label,
                face_mask: rel("face", "masks"),
                body_mask: rel("body", "masks"),
                ref_face: rel("face", "refs"),
                ref_body: rel("body", "refs"),
            };
            c.face_mask.write_pgm(&dir.join(&entry.face_mask))?;
            c.body_mask.write_pgm(&dir.join(&entry.body_mask))?;
            c.ref_face.write_pgm(&dir.join(&entry.ref_face))?;
            c.ref_body.write_pgm(&dir.join(&entry.ref_body))?;
            regions.push(entry);
        }
        let line = ManifestLine {
            id: r.id.clone(),
            caption: r.caption.clone(),
            feature_row: row,
            feature_dim: r.feature.len(),
            image_size: [r.image_size.0, r.image_size.1],
            skeleton: r.skeleton.clone(),
            characters: regions,
        };
        serde_json::to_writer(&mut manifest, &line).expect("manifest lines serialize");
        manifest.push(b'\n');
    }
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| MsdbError::io(&mpath, e))?;

    let bpath = dir.join(FEATURE_FILE);
    let mut bank = Vec::with_capacity(BANK_HEADER_LEN + 4 * index.len() * index.dim());
    bank.extend_from_slice(FEATURE_BANK_MAGIC);
    bank.extend_from_slice(&FEATURE_BANK_VERSION.to_le_bytes());
    bank.extend_from_slice(&(index.len() as u64).to_le_bytes());
    bank.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    for x in index.feature_matrix().data() {
        bank.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    let mut f = fs::File::create(&bpath).map_err(|e| MsdbError::io(&bpath, e))?;
    f.write_all(&bank).map_err(|e| MsdbError::io(&bpath, e))?;
    Ok(())
}

#[cfg(test)]
pub(crate) fn bank_offset(dim: usize, row: usize) -> usize {
    BANK_HEADER_LEN + 4 * dim * row
}
