//! Index file: `"DPSX"`, u32 version, u64 header length, JSON header, id
//! array (u32 length + UTF-8 bytes each), f32 vector block, then the graph
//! adjacency block (per node: u8 level, then per layer u32 count + u32 ids).
//! Everything little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hnsw::Graph;
use super::{id_ranks, EmbeddingIndex, IndexParams};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"DPSX";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    count: usize,
    params: IndexParams,
    graph: Option<GraphHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphHeader {
    m: usize,
    entry: u32,
    max_level: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt {
        what: "index",
        msg: msg.into(),
    }
}

pub fn to_bytes(index: &EmbeddingIndex) -> Vec<u8> {
    let header = Header {
        dim: index.dim,
        count: index.ids.len(),
        params: index.params.clone(),
        graph: index.graph.as_ref().map(|g| GraphHeader {
            m: g.m,
            entry: g.entry,
            max_level: g.max_level,
        }),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + index.vectors.len() * 4 + index.ids.len() * 16);
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for id in &index.ids {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    for v in &index.vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(g) = &index.graph {
        for (node, layers) in g.neighbors.iter().enumerate() {
            out.push(g.levels[node]);
            for list in layers {
                out.extend_from_slice(&(list.len() as u32).to_le_bytes());
                for n in list {
                    out.extend_from_slice(&n.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<EmbeddingIndex> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != INDEX_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = c.u32()?;
    if version != INDEX_VERSION {
        return Err(Error::Version {
            what: "index",
            found: version,
            expected: INDEX_VERSION,
        });
    }
    let header_len = c.u64()? as usize;
    let header: Header = serde_json::from_slice(c.take(header_len)?).map_err(|e| corrupt(e.to_string()))?;
    if header.dim == 0 || header.count == 0 {
        return Err(corrupt("empty index"));
    }
    let mut ids = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let len = c.u32()? as usize;
        let raw = c.take(len)?;
        ids.push(String::from_utf8(raw.to_vec()).map_err(|e| corrupt(e.to_string()))?);
    }
    let n_floats = header
        .count
        .checked_mul(header.dim)
        .ok_or_else(|| corrupt("size overflow"))?;
    let block = c.take(n_floats.checked_mul(4).ok_or_else(|| corrupt("size overflow"))?)?;
    let vectors: Vec<f32> = block
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let graph = match header.graph {
        None => None,
        Some(gh) => {
            let mut levels = Vec::with_capacity(header.count);
            let mut neighbors = Vec::with_capacity(header.count);
            for _ in 0..header.count {
                let level = c.u8()?;
                let mut layers = Vec::with_capacity(level as usize + 1);
                for _ in 0..=level {
                    let cnt = c.u32()? as usize;
                    let raw = c.take(cnt.checked_mul(4).ok_or_else(|| corrupt("size overflow"))?)?;
                    let list: Vec<u32> = raw
                        .chunks_exact(4)
                        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                        .collect();
                    if list.iter().any(|&n| n as usize >= header.count) {
                        return Err(corrupt("neighbor id out of range"));
                    }
                    layers.push(list);
                }
                levels.push(level);
                neighbors.push(layers);
            }
            if gh.entry as usize >= header.count || levels[gh.entry as usize] as usize != gh.max_level {
                return Err(corrupt("bad entry point"));
            }
            Some(Graph::from_parts(gh.m, gh.entry, gh.max_level, levels, neighbors))
        }
    };
    if c.pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(EmbeddingIndex {
        dim: header.dim,
        id_rank: id_ranks(&ids),
        ids,
        vectors,
        params: header.params,
        graph,
    })
}

pub fn save_index(index: &EmbeddingIndex, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(index))?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<EmbeddingIndex> {
    from_bytes(&fs::read(path)?)
}
