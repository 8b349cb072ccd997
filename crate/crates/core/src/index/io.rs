use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::nn::checkpoint::{get_array, get_bytes, get_f32s, get_u32, put_bytes, put_f32s, put_u32};
use crate::text::Chunk;

use super::doc_index::DocIndex;
use super::IndexError;

pub const INDEX_MAGIC: [u8; 8] = *b"RSUMINDX";
pub const INDEX_VERSION: u32 = 1;

fn u32_of(v: usize) -> Result<u32, IndexError> {
    u32::try_from(v).map_err(|_| IndexError::Format(format!("{v} does not fit in u32")))
}

/// Little-endian layout: magic, version, d, num_chunks, m, doc id, the
/// embedding matrix, then each chunk's pad length and ids.
pub fn write_index<W: Write>(w: &mut W, index: &DocIndex) -> Result<(), IndexError> {
    w.write_all(&INDEX_MAGIC)?;
    put_u32(w, INDEX_VERSION)?;
    put_u32(w, u32_of(index.d)?)?;
    put_u32(w, u32_of(index.num_chunks())?)?;
    put_u32(w, u32_of(index.m)?)?;
    put_bytes(w, index.doc_id.as_bytes())?;
    put_f32s(w, &index.embeddings)?;
    for c in &index.chunks {
        put_u32(w, u32_of(c.pad_len)?)?;
        for &t in &c.ids {
            put_u32(w, t)?;
        }
    }
    Ok(())
}

pub fn read_index<R: Read>(r: &mut R) -> Result<DocIndex, IndexError> {
    let magic: [u8; 8] = get_array(r)?;
    if magic != INDEX_MAGIC {
        return Err(IndexError::Format("bad magic bytes".into()));
    }
    let version = get_u32(r)?;
    if version != INDEX_VERSION {
        return Err(IndexError::Version {
            found: version,
            expected: INDEX_VERSION,
        });
    }
    let d = get_u32(r)? as usize;
    let n = get_u32(r)? as usize;
    let m = get_u32(r)? as usize;
    let doc_id = String::from_utf8(get_bytes(r)?).map_err(|_| IndexError::Format("doc id is not UTF-8".into()))?;
    let embeddings = get_f32s(r, n * d)?;
    let mut chunks = Vec::with_capacity(n);
    for index in 0..n {
        let pad_len = get_u32(r)? as usize;
        let ids = (0..m).map(|_| get_u32(r)).collect::<std::io::Result<Vec<u32>>>()?;
        chunks.push(Chunk {
            doc_id: doc_id.clone(),
            index,
            ids,
            pad_len,
        });
    }
    Ok(DocIndex {
        doc_id,
        d,
        m,
        embeddings,
        chunks,
    })
}

pub fn save_index(path: &Path, index: &DocIndex) -> Result<(), IndexError> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_index(&mut w, index)?;
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<DocIndex, IndexError> {
    read_index(&mut BufReader::new(File::open(path)?))
}
