use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result, Scalar};

pub const MAGIC: &[u8; 4] = b"DSEM";
pub const VERSION: u32 = 1;

/// Externally computed vectors keyed by `dialogue_id/turn` (turns) and
/// `dialogue_id/turn/sentence` (sentences).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    table: HashMap<String, Vec<f32>>,
}

impl PrecomputedEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, v: Vec<f32>) -> Result<()> {
        let key = key.into();
        if v.len() != self.dim {
            return Err(Error::EmbeddingFormat(format!(
                "vector for `{key}` has dimension {}, expected {}",
                v.len(),
                self.dim
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::EmbeddingFormat(format!("vector for `{key}` has non-finite entries")));
        }
        if self.table.contains_key(&key) {
            return Err(Error::EmbeddingFormat(format!("duplicate key `{key}`")));
        }
        self.table.insert(key, v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn lookup<T: Scalar>(&self, key: &str) -> Result<Vec<T>> {
        self.table
            .get(key)
            .map(|v| v.iter().map(|&x| T::of(f64::from(x))).collect())
            .ok_or_else(|| Error::MissingEmbedding(key.to_string()))
    }

    fn sorted_keys(&self) -> Vec<&String> {
        let mut keys: Vec<&String> = self.table.keys().collect();
        keys.sort();
        keys
    }
}

/// Loads either the binary or the text format, chosen by the leading magic.
pub fn load_precomputed(path: impl AsRef<Path>) -> Result<super::EmbeddingProvider> {
    let bytes = fs::read(path.as_ref())?;
    let table = if bytes.starts_with(MAGIC) {
        parse_binary(&bytes)?
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::EmbeddingFormat("neither binary magic nor UTF-8 text".into()))?;
        parse_text(text)?
    };
    Ok(super::EmbeddingProvider::Precomputed(table))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::EmbeddingFormat(format!("truncated file while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn parse_binary(bytes: &[u8]) -> Result<PrecomputedEmbeddings> {
    let mut c = Cursor { buf: bytes, pos: 4 };
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::EmbeddingFormat(format!("unsupported version {version}")));
    }
    let dim = c.u32("dimension")? as usize;
    if dim == 0 {
        return Err(Error::EmbeddingFormat("dimension 0 in header".into()));
    }
    let count = c.u64("record count")?;
    let mut table = PrecomputedEmbeddings::new(dim);
    for row in 1..=count {
        let len = c.u32(&format!("key length of record {row}"))? as usize;
        let key = std::str::from_utf8(c.take(len, &format!("key of record {row}"))?)
            .map_err(|_| Error::EmbeddingFormat(format!("record {row}: key is not UTF-8")))?
            .to_string();
        let raw = c.take(4 * dim, &format!("vector of record {row}"))?;
        let v = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        table
            .insert(key, v)
            .map_err(|e| Error::EmbeddingFormat(format!("record {row}: {e}")))?;
    }
    if c.pos != bytes.len() {
        return Err(Error::EmbeddingFormat(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - c.pos
        )));
    }
    Ok(table)
}

/// Text format: an optional `dim <D>` header line, then one record per line:
/// the key followed by D whitespace-separated decimal floats. Without a header
/// the first record fixes D.
fn parse_text(text: &str) -> Result<PrecomputedEmbeddings> {
    let mut table: Option<PrecomputedEmbeddings> = None;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let key = fields.next().unwrap();
        if key == "dim" && table.is_none() {
            let d: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .filter(|&d| d > 0)
                .ok_or_else(|| Error::EmbeddingFormat(format!("row {row}: malformed header")))?;
            table = Some(PrecomputedEmbeddings::new(d));
            continue;
        }
        let v = fields
            .map(|f| f.parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| Error::EmbeddingFormat(format!("row {row}: {e}")))?;
        let t = table.get_or_insert_with(|| PrecomputedEmbeddings::new(v.len()));
        if v.len() != t.dim() {
            return Err(Error::EmbeddingFormat(format!(
                "row {row}: dimension {} does not match {}",
                v.len(),
                t.dim()
            )));
        }
        t.insert(key, v)
            .map_err(|e| Error::EmbeddingFormat(format!("row {row}: {e}")))?;
    }
    table.ok_or_else(|| Error::EmbeddingFormat("empty file without header".into()))
}

/// Writes the binary format with records sorted by key.
pub fn write_binary(table: &PrecomputedEmbeddings, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(table.dim as u32).to_le_bytes())?;
    w.write_all(&(table.len() as u64).to_le_bytes())?;
    for key in table.sorted_keys() {
        w.write_all(&(key.len() as u32).to_le_bytes())?;
        w.write_all(key.as_bytes())?;
        for x in &table.table[key] {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Writes the text format with a header and records sorted by key.
pub fn write_text(table: &PrecomputedEmbeddings, mut w: impl Write) -> Result<()> {
    writeln!(w, "dim {}", table.dim)?;
    for key in table.sorted_keys() {
        write!(w, "{key}")?;
        for x in &table.table[key] {
            write!(w, " {x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbeddingProvider;

    fn table(dim: usize, rows: usize) -> PrecomputedEmbeddings {
        let mut t = PrecomputedEmbeddings::new(dim);
        for r in 0..rows {
            t.insert(format!("d{r}/1"), (0..dim).map(|i| (r * dim + i) as f32 * 0.25).collect())
                .unwrap();
        }
        t
    }

    fn load_bytes(bytes: &[u8]) -> Result<EmbeddingProvider> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        fs::write(&p, bytes).unwrap();
        load_precomputed(&p)
    }

    #[test]
    fn binary_header_sets_dimension() {
        let t = table(768, 3);
        let mut buf = Vec::new();
        write_binary(&t, &mut buf).unwrap();
        let p = load_bytes(&buf).unwrap();
        assert_eq!(p.dim(), 768);
        match p {
            EmbeddingProvider::Precomputed(back) => assert_eq!(back, t),
            _ => unreachable!(),
        }
    }

    #[test]
    fn text_round_trip() {
        let t = table(5, 4);
        let mut buf = Vec::new();
        write_text(&t, &mut buf).unwrap();
        match load_bytes(&buf).unwrap() {
            EmbeddingProvider::Precomputed(back) => assert_eq!(back, t),
            _ => unreachable!(),
        }
    }

    #[test]
    fn short_text_row_reports_row_number() {
        let mut text = String::from("dim 768\n");
        let full: Vec<String> = (0..768).map(|i| i.to_string()).collect();
        text += &format!("a/0 {}\n", full.join(" "));
        text += &format!("a/1 {}\n", full[..767].join(" "));
        let err = load_bytes(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn empty_body_errors_on_lookup() {
        let mut buf = Vec::new();
        write_binary(&PrecomputedEmbeddings::new(8), &mut buf).unwrap();
        let p = load_bytes(&buf).unwrap();
        assert_eq!(p.dim(), 8);
        let t = crate::corpus::Turn::new(0, crate::corpus::SpeakerRole::Professional, ["Hi.".to_string()]);
        let err = p.embed_turn::<f64>("x", &t).unwrap_err();
        assert!(matches!(&err, Error::MissingEmbedding(k) if k == "x/0"), "{err}");

        let p = load_bytes(b"dim 4\n").unwrap();
        assert_eq!(p.dim(), 4);
    }

    #[test]
    fn duplicate_keys_rejected() {
        let err = load_bytes(b"a/0 1 2\na/0 3 4\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn truncated_binary_rejected() {
        let mut buf = Vec::new();
        write_binary(&table(4, 2), &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(load_bytes(&buf).is_err());
    }
}
