//! Single-file archive of named byte entries.
//!
//! Layout: magic `CMAR`, u32 version (1), u32 entry count, then per entry
//! u32 name length, UTF-8 name, u64 payload length, payload. Entries keep
//! insertion order so identical content yields identical bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CMAR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    entries: Vec<(String, Vec<u8>)>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, data: Vec<u8>) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = data,
            None => self.entries.push((name, data)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, data) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            out.extend_from_slice(data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |why: &str| Error::format(origin, why.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| bad("truncated archive"))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad("missing CMAR header"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4"));
        if version != VERSION {
            return Err(bad("unsupported archive version"));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
            let name = String::from_utf8(take(nlen)?.to_vec())
                .map_err(|_| bad("entry name is not UTF-8"))?;
            let dlen = u64::from_le_bytes(take(8)?.try_into().expect("8")) as usize;
            entries.push((name, take(dlen)?.to_vec()));
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_order() {
        let mut a = Archive::new();
        a.insert("b", vec![1, 2, 3]);
        a.insert("a", vec![]);
        a.insert("b", vec![9]);
        let back = Archive::from_bytes(&a.to_bytes(), Path::new("m")).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.names().collect::<Vec<_>>(), ["b", "a"]);
        assert_eq!(back.get("b"), Some(&[9u8][..]));
        assert!(Archive::from_bytes(&a.to_bytes()[..10], Path::new("m")).is_err());
    }
}
