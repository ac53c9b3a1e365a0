//! FFEB binary container and the CSV import/export path.
//!
//! FFEB layout, little-endian:
//!
//! ```text
//! "FFEB" | u32 version=1 | u32 N | u32 d | u32 G | u32 M
//! N*d f32 row-major vectors
//! N u32 identity indices
//! N u16 attribute indices
//! u32 length | UTF-8 JSON label table
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{EmbeddingSet, LabelTable};
use crate::error::{Error, Result};

pub const FFEB_MAGIC: &[u8; 4] = b"FFEB";
pub const FFEB_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| {
                Error::format(
                    self.buf.len() as u64,
                    format!(
                        "truncated payload: {what} needs {len} bytes at offset {}, file has {}",
                        self.pos,
                        self.buf.len()
                    ),
                )
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<EmbeddingSet> {
    if bytes.len() < 4 || &bytes[..4] != FFEB_MAGIC {
        let got = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::format(
            0,
            format!("magic mismatch: expected \"FFEB\", found {got:?}"),
        ));
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u32("version")?;
    if version != FFEB_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let n = r.u32("N")? as usize;
    let d = r.u32("d")? as usize;
    let g = r.u32("G")? as usize;
    let m = r.u32("M")? as usize;
    if n == 0 || d == 0 || g == 0 || m == 0 {
        return Err(Error::format(
            8,
            format!("header dimensions must be positive (N={n}, d={d}, G={g}, M={m})"),
        ));
    }
    if m > u16::MAX as usize + 1 {
        return Err(Error::format(20, format!("M={m} exceeds u16 attribute range")));
    }
    debug_assert_eq!(r.pos, HEADER_LEN);

    let comps = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::format(8, "N*d overflows"))?;
    let vec_bytes = r.take(comps, "vectors")?;
    let vectors: Vec<f32> = vec_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();

    let id_start = r.pos;
    let identity: Vec<u32> = r
        .take(n * 4, "identity indices")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(i) = identity.iter().position(|&y| y as usize >= g) {
        return Err(Error::format(
            (id_start + 4 * i) as u64,
            format!("record {i}: identity {} out of range [0, {g})", identity[i]),
        ));
    }

    let attr_start = r.pos;
    let attribute: Vec<u16> = r
        .take(n * 2, "attribute indices")?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
        .collect();
    if let Some(i) = attribute.iter().position(|&a| a as usize >= m) {
        return Err(Error::format(
            (attr_start + 2 * i) as u64,
            format!("record {i}: attribute {} out of range [0, {m})", attribute[i]),
        ));
    }

    let trailer_at = r.pos;
    let json_len = r.u32("label trailer length")? as usize;
    let json = r.take(json_len, "label trailer")?;
    let labels: LabelTable = serde_json::from_slice(json).map_err(|e| {
        Error::format(trailer_at as u64 + 4, format!("label trailer: {e}"))
    })?;
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} trailing bytes after label trailer", bytes.len() - r.pos),
        ));
    }
    if !labels.identities.is_empty() && labels.identities.len() != g {
        return Err(Error::format(
            trailer_at as u64,
            format!("label trailer names {} identities, header says {g}", labels.identities.len()),
        ));
    }

    EmbeddingSet::new(d, vectors, identity, attribute, m, labels)
}

fn encode(set: &EmbeddingSet, out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(FFEB_MAGIC)?;
    for v in [
        FFEB_VERSION,
        set.len() as u32,
        set.dim() as u32,
        set.num_identities() as u32,
        set.num_attributes() as u32,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    for x in set.vectors() {
        out.write_all(&x.to_le_bytes())?;
    }
    for y in set.identities() {
        out.write_all(&y.to_le_bytes())?;
    }
    for a in set.attributes() {
        out.write_all(&a.to_le_bytes())?;
    }
    let json = serde_json::to_vec(set.labels()).map_err(std::io::Error::other)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    Ok(())
}

pub fn save_dataset(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(set, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads `index,identity,attribute,v0,...,v{d-1}` rows. A header row whose
/// first field is `index` is skipped. Identity and attribute fields are
/// external names; indices are assigned in order of first appearance.
pub fn import_csv(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;

    let mut identity_names: Vec<String> = Vec::new();
    let mut attribute_names: Vec<String> = Vec::new();
    let mut id_lookup = std::collections::HashMap::new();
    let mut attr_lookup = std::collections::HashMap::new();
    let mut vectors = Vec::new();
    let mut identity = Vec::new();
    let mut attribute = Vec::new();
    let mut dim = None;

    for (rowno, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Validation(format!("csv row {rowno}: {e}")))?;
        if rowno == 0 && rec.get(0) == Some("index") {
            continue;
        }
        if rec.len() < 4 {
            return Err(Error::Validation(format!(
                "csv row {rowno}: expected index,identity,attribute and at least one component"
            )));
        }
        let d = rec.len() - 3;
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::Validation(format!(
                    "csv row {rowno}: {d} components, earlier rows have {prev}"
                )));
            }
            Some(_) => {}
        }
        let id_name = rec[1].to_string();
        let next_id = id_lookup.len() as u32;
        let y = *id_lookup.entry(id_name.clone()).or_insert_with(|| {
            identity_names.push(id_name);
            next_id
        });
        let attr_name = rec[2].to_string();
        let next_attr = attr_lookup.len();
        let a = *attr_lookup.entry(attr_name.clone()).or_insert_with(|| {
            attribute_names.push(attr_name);
            next_attr
        });
        if a > u16::MAX as usize {
            return Err(Error::Validation("too many attributes for u16 labels".into()));
        }
        identity.push(y);
        attribute.push(a as u16);
        for field in rec.iter().skip(3) {
            let x: f32 = field.parse().map_err(|_| {
                Error::Validation(format!("csv row {rowno}: bad component `{field}`"))
            })?;
            vectors.push(x);
        }
    }
    let dim = dim.ok_or_else(|| Error::Validation("csv file has no data rows".into()))?;
    let m = attribute_names.len();
    EmbeddingSet::new(
        dim,
        vectors,
        identity,
        attribute,
        m,
        LabelTable {
            identities: identity_names,
            attributes: attribute_names,
        },
    )
}

pub fn export_csv(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    let mut header = vec!["index".to_string(), "identity".into(), "attribute".into()];
    header.extend((0..set.dim()).map(|c| format!("v{c}")));
    w.write_record(&header).map_err(to_io)?;
    for (i, row) in set.rows().enumerate() {
        let mut rec = Vec::with_capacity(set.dim() + 3);
        rec.push(i.to_string());
        rec.push(set.labels().identity_name(set.identities()[i] as usize).to_string());
        rec.push(set.labels().attribute_name(set.attributes()[i] as usize).to_string());
        // f32 Display is the shortest round-tripping representation.
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingSet {
        EmbeddingSet::new(
            2,
            vec![1.0, 0.5, -0.25, 2.0, 3.0, 1e-7, 0.1, 0.2],
            vec![0, 0, 1, 1],
            vec![0, 0, 0, 0],
            1,
            LabelTable {
                identities: vec!["alice".into(), "bob".into()],
                attributes: vec!["grp".into()],
            },
        )
        .unwrap()
    }

    fn bytes_of(set: &EmbeddingSet) -> Vec<u8> {
        let mut buf = Vec::new();
        encode(set, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_small() {
        let set = sample();
        let back = decode(&bytes_of(&set)).unwrap();
        assert_eq!(back, set);
        assert_eq!((back.len(), back.dim(), back.num_identities(), back.num_attributes()), (4, 2, 2, 1));
    }

    #[test]
    fn bad_magic() {
        let mut b = bytes_of(&sample());
        b[..4].copy_from_slice(b"XXXX");
        let err = decode(&b).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        assert!(err.to_string().contains("magic mismatch"));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let b = bytes_of(&sample());
        let err = decode(&b[..40]).unwrap_err();
        assert!(err.to_string().contains("truncated payload: vectors"), "{err}");
    }

    #[test]
    fn identity_spanning_attributes_rejected() {
        let set = EmbeddingSet::new(
            1,
            vec![1.0; 5],
            vec![0, 1, 2, 3, 3],
            vec![0, 0, 0, 0, 0],
            2,
            LabelTable::default(),
        )
        .unwrap();
        let mut b = bytes_of(&set);
        // last attribute entry sits just before the trailer
        let json_len = serde_json::to_vec(set.labels()).unwrap().len();
        let last_attr = b.len() - json_len - 4 - 2;
        b[last_attr] = 1;
        let err = decode(&b).unwrap_err();
        assert_eq!(err.to_string(), "invalid dataset: identity 3 spans attributes");
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = save_dataset(&sample(), "/nonexistent-dir/x.ffeb").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let set = sample();
        export_csv(&set, &p).unwrap();
        let back = import_csv(&p).unwrap();
        assert_eq!(back, set);
    }
}
