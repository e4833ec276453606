//! Binary dump of a [`SplitDataset`].
//!
//! Layout (little-endian): magic `ADSRDS01`, `u32` header length, JSON header
//! (key, window, user count, item ids, attribute names, item attribute lists,
//! split sizes), then for each of train, valid, test the `u32` user column
//! followed by the `u32` item matrix.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ItemAttributeTable, SplitDataset, Vocabulary, WindowSet};
use crate::error::io_err;
use crate::{AdsrError, Result};

const MAGIC: &[u8; 8] = b"ADSRDS01";

#[derive(Serialize, Deserialize)]
struct Header {
    key: String,
    window: usize,
    n_users: usize,
    items: Vec<u64>,
    attrs: Vec<String>,
    item_attrs: Vec<Vec<u32>>,
    sizes: [usize; 3],
}

/// SHA-256 over the raw input files and the canonical JSON of `config`.
pub fn content_key(inputs: &[&Path], config: &impl Serialize) -> Result<String> {
    let mut h = Sha256::new();
    for p in inputs {
        let bytes = fs::read(p).map_err(io_err(*p))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    h.update(serde_json::to_vec(&serde_json::to_value(config)?)?);
    Ok(hex::encode(h.finalize()))
}

pub fn write_cache(path: &Path, key: &str, ds: &SplitDataset) -> Result<()> {
    let header = Header {
        key: key.to_string(),
        window: ds.train.window(),
        n_users: ds.n_users,
        items: ds.vocab.items().to_vec(),
        attrs: ds.vocab.attrs().to_vec(),
        item_attrs: (0..ds.attributes.n_items()).map(|i| ds.attributes.attrs(i).to_vec()).collect(),
        sizes: [ds.train.len(), ds.valid.len(), ds.test.len()],
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(json.len() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for set in [&ds.train, &ds.valid, &ds.test] {
        for v in set.raw_users().iter().chain(set.raw_items()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))?;
    Ok(())
}

/// Returns the stored key and dataset.
pub fn read_cache(path: &Path) -> Result<(String, SplitDataset)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let bad = |m: &str| AdsrError::DataIntegrity(format!("{}: {m}", path.display()));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a dataset cache"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?)?;
    let mut words = bytes[12 + hlen..].chunks_exact(4);
    if !words.remainder().is_empty() {
        return Err(bad("trailing bytes"));
    }
    let mut take = |n: usize| -> Result<Vec<u32>> {
        let v: Vec<u32> = words
            .by_ref()
            .take(n)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if v.len() != n {
            return Err(bad("truncated body"));
        }
        Ok(v)
    };
    let mut sets = Vec::with_capacity(3);
    for &n in &header.sizes {
        let users = take(n)?;
        let items = take(n * header.window)?;
        sets.push(WindowSet::from_parts(header.window, users, items)?);
    }
    if words.next().is_some() {
        return Err(bad("trailing bytes"));
    }
    let test = sets.pop().unwrap();
    let valid = sets.pop().unwrap();
    let train = sets.pop().unwrap();
    let attributes = ItemAttributeTable::new(header.attrs.len(), header.item_attrs)?;
    Ok((
        header.key,
        SplitDataset {
            vocab: Vocabulary::new(header.items, header.attrs),
            attributes,
            train,
            valid,
            test,
            n_users: header.n_users,
        },
    ))
}

/// Reads the cache if it exists and was written for `key`.
pub fn load_if_fresh(path: &Path, key: &str) -> Result<Option<SplitDataset>> {
    if !path.exists() {
        return Ok(None);
    }
    let (stored, ds) = read_cache(path)?;
    Ok((stored == key).then_some(ds))
}
