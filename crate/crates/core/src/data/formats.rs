//! Corpus annotations (JSON lines) and the `MWE1` binary embedding container.
//!
//! Container layout, all integers little-endian:
//!
//! ```text
//! "MWE1"  u32 embedding_dim
//! repeated: u16 id_len, id (UTF-8), u32 n_tokens, n_tokens*dim f32 row-major
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{AnnotatedSentence, Corpus, Target};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"MWE1";

/// One line of the annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceRecord {
    pub sentence_id: String,
    pub n_tokens: usize,
    pub targets: Vec<Target>,
}

pub fn read_annotations(reader: impl BufRead, source_name: &str) -> Result<Vec<SentenceRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(source_name, format!("line {}", i + 1), e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_annotations(mut writer: impl Write, records: &[SentenceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Decoded embedding record, values widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub sentence_id: String,
    pub embeddings: Matrix,
}

struct ByteReader<R> {
    inner: R,
    offset: u64,
    source_name: String,
}

impl<R: Read> ByteReader<R> {
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<bool> {
        let start = self.offset;
        let mut got = 0;
        while got < buf.len() {
            let n = self.inner.read(&mut buf[got..])?;
            if n == 0 {
                break;
            }
            got += n;
        }
        self.offset += got as u64;
        if got == 0 {
            return Ok(false);
        }
        if got < buf.len() {
            return Err(Error::format(
                &self.source_name,
                format!("byte offset {start}"),
                format!("truncated {what}: wanted {} bytes, found {got}", buf.len()),
            ));
        }
        Ok(true)
    }

    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let start = self.offset;
        if !self.fill(buf, what)? {
            return Err(Error::format(
                &self.source_name,
                format!("byte offset {start}"),
                format!("unexpected end of file reading {what}"),
            ));
        }
        Ok(())
    }
}

pub fn read_embeddings(
    reader: impl Read,
    source_name: &str,
) -> Result<(usize, Vec<EmbeddingRecord>)> {
    let mut r = ByteReader {
        inner: reader,
        offset: 0,
        source_name: source_name.to_string(),
    };
    let mut magic = [0u8; 4];
    r.exact(&mut magic, "magic")?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::format(
            source_name,
            "byte offset 0",
            format!("bad magic {magic:?}, expected \"MWE1\""),
        ));
    }
    let mut u32buf = [0u8; 4];
    r.exact(&mut u32buf, "embedding_dim")?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    if dim == 0 {
        return Err(Error::format(
            source_name,
            "byte offset 4",
            "embedding_dim is zero",
        ));
    }

    let mut records = Vec::new();
    loop {
        let rec_start = r.offset;
        let mut u16buf = [0u8; 2];
        if !r.fill(&mut u16buf, "id length")? {
            break;
        }
        let id_len = u16::from_le_bytes(u16buf) as usize;
        let mut id = vec![0u8; id_len];
        r.exact(&mut id, "sentence id")?;
        let sentence_id = String::from_utf8(id).map_err(|_| {
            Error::format(
                source_name,
                format!("byte offset {rec_start}"),
                "sentence id is not UTF-8",
            )
        })?;
        r.exact(&mut u32buf, "n_tokens")?;
        let n_tokens = u32::from_le_bytes(u32buf) as usize;
        let mut payload = vec![0u8; n_tokens * dim * 4];
        r.exact(&mut payload, "embedding payload")?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::format(
                source_name,
                format!("byte offset {rec_start}"),
                format!("non-finite embedding value in {sentence_id:?}"),
            ));
        }
        records.push(EmbeddingRecord {
            sentence_id,
            embeddings: Matrix::new(n_tokens, dim, data)?,
        });
    }
    Ok((dim, records))
}

/// Writes the container. Values are narrowed to `f32`.
pub fn write_embeddings(
    mut writer: impl Write,
    dim: usize,
    records: &[EmbeddingRecord],
) -> Result<()> {
    writer.write_all(EMBEDDING_MAGIC)?;
    writer.write_all(&(dim as u32).to_le_bytes())?;
    for rec in records {
        if rec.embeddings.cols() != dim {
            return Err(Error::InvalidArgument(format!(
                "record {:?} has width {}, container dim is {dim}",
                rec.sentence_id,
                rec.embeddings.cols()
            )));
        }
        let id = rec.sentence_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| {
            Error::InvalidArgument(format!("sentence id too long: {}", rec.sentence_id))
        })?;
        writer.write_all(&id_len.to_le_bytes())?;
        writer.write_all(id)?;
        writer.write_all(&(rec.embeddings.rows() as u32).to_le_bytes())?;
        for &x in rec.embeddings.data() {
            writer.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Joins annotation records with embedding records by sentence id.
pub fn assemble_corpus(
    records: Vec<SentenceRecord>,
    dim: usize,
    embeddings: Vec<EmbeddingRecord>,
) -> Result<Corpus> {
    let mut by_id: HashMap<String, Matrix> = HashMap::with_capacity(embeddings.len());
    for e in embeddings {
        if by_id.contains_key(&e.sentence_id) {
            return Err(Error::format(
                "embeddings",
                format!("sentence {:?}", e.sentence_id),
                "duplicate record",
            ));
        }
        by_id.insert(e.sentence_id, e.embeddings);
    }
    let mut sentences = Vec::with_capacity(records.len());
    for rec in records {
        let emb = by_id.remove(&rec.sentence_id).ok_or_else(|| {
            Error::format(
                "embeddings",
                format!("sentence {:?}", rec.sentence_id),
                "no embedding record for annotated sentence",
            )
        })?;
        if emb.rows() != rec.n_tokens {
            return Err(Error::format(
                "embeddings",
                format!("sentence {:?}", rec.sentence_id),
                format!(
                    "{} embedding rows but n_tokens is {}",
                    emb.rows(),
                    rec.n_tokens
                ),
            ));
        }
        sentences.push(AnnotatedSentence {
            sentence_id: rec.sentence_id,
            n_tokens: rec.n_tokens,
            targets: rec.targets,
            embeddings: emb,
        });
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(Error::format(
            "embeddings",
            format!("sentence {extra:?}"),
            "embedding record without annotation",
        ));
    }
    Corpus::new(sentences, dim)
}

pub fn load_corpus(annotations: &Path, embeddings: &Path) -> Result<Corpus> {
    let ann_name = annotations.display().to_string();
    let emb_name = embeddings.display().to_string();
    let f = File::open(annotations).map_err(|e| Error::file(annotations, e))?;
    let records = read_annotations(BufReader::new(f), &ann_name)?;
    let f = File::open(embeddings).map_err(|e| Error::file(embeddings, e))?;
    let (dim, embs) = read_embeddings(BufReader::new(f), &emb_name)?;
    assemble_corpus(records, dim, embs)
}

/// Splits a corpus back into its two on-disk representations.
pub fn corpus_records(corpus: &Corpus) -> (Vec<SentenceRecord>, Vec<EmbeddingRecord>) {
    corpus
        .sentences()
        .iter()
        .map(|s| {
            (
                SentenceRecord {
                    sentence_id: s.sentence_id.clone(),
                    n_tokens: s.n_tokens,
                    targets: s.targets.clone(),
                },
                EmbeddingRecord {
                    sentence_id: s.sentence_id.clone(),
                    embeddings: s.embeddings.clone(),
                },
            )
        })
        .unzip()
}

pub fn save_corpus(corpus: &Corpus, annotations: &Path, embeddings: &Path) -> Result<()> {
    let (recs, embs) = corpus_records(corpus);
    let f = File::create(annotations).map_err(|e| Error::file(annotations, e))?;
    let mut w = BufWriter::new(f);
    write_annotations(&mut w, &recs)?;
    w.flush()?;
    let f = File::create(embeddings).map_err(|e| Error::file(embeddings, e))?;
    let mut w = BufWriter::new(f);
    write_embeddings(&mut w, corpus.embedding_dim(), &embs)?;
    w.flush()?;
    Ok(())
}
