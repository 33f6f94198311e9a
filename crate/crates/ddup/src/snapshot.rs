//! Versioned binary snapshot of a [`CatalogStore`].
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! header   "DDUP" | version u16 | flags u16 | section count u32
//! table    per section: kind u16 | reserved u16 | offset u64 | length u64
//! crc32    over header and table
//! sections payload followed by its crc32, at the offsets in the table
//! ```
//!
//! Index lists store record ordinals rather than vectors; loading re-derives
//! the stored vectors from the records, so a file holds each vector once.
//! Every checksum and bound is verified before any part is decoded.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ddup_core::decider::{DeciderConfig, DeciderModel};
use ddup_core::ivf::prepare;
use ddup_core::{EmbeddingVector, IvfIndex, Metric, PcaModel, ProductRecord};
use thiserror::Error;

use crate::catalog::{CatalogStore, IndexParams};
use crate::error::ServiceError;

pub const MAGIC: &[u8; 4] = b"DDUP";
pub const VERSION: u16 = 1;

const HEADER_LEN: usize = 12;
const ENTRY_LEN: usize = 20;
const NONE_U32: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum SectionKind {
    Meta = 1,
    Records = 2,
    Centroids = 3,
    Lists = 4,
    PcaText = 5,
    PcaImage = 6,
    Decider = 7,
}

impl SectionKind {
    fn from_u16(v: u16) -> Option<Self> {
        use SectionKind::*;
        [Meta, Records, Centroids, Lists, PcaText, PcaImage, Decider]
            .into_iter()
            .find(|k| *k as u16 == v)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("not a snapshot (bad magic bytes)")]
    BadMagic,
    #[error("unsupported snapshot version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checksum mismatch in {0}")]
    Checksum(&'static str),
    #[error("file truncated: {0}")]
    Truncated(&'static str),
    #[error("malformed snapshot: {0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> SnapshotError {
    SnapshotError::Malformed(msg.into())
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("section element count fits in u32"));
    }
    fn opt(&mut self, v: Option<usize>) {
        match v {
            Some(x) => self.len(x),
            None => self.u32(NONE_U32),
        }
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], section: &'static str) -> Self {
        Self { buf, pos: 0, section }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed(format!("{} section ends early", self.section)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, SnapshotError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize, SnapshotError> {
        Ok(self.u32()? as usize)
    }
    fn opt(&mut self) -> Result<Option<usize>, SnapshotError> {
        let v = self.u32()?;
        Ok((v != NONE_U32).then_some(v as usize))
    }
    fn str(&mut self) -> Result<String, SnapshotError> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed(format!("{}: invalid utf-8", self.section)))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, SnapshotError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| malformed("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn vector(&mut self, n: usize) -> Result<EmbeddingVector, SnapshotError> {
        EmbeddingVector::new(self.f32s(n)?).map_err(|e| malformed(format!("{}: {e}", self.section)))
    }
    fn finish(&self) -> Result<(), SnapshotError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(malformed(format!("{} section has trailing bytes", self.section)))
        }
    }
}

fn encode_meta(store: &CatalogStore) -> Vec<u8> {
    let mut w = Writer::default();
    let p = store.index_params();
    w.len(store.dim());
    w.u8(p.metric.code());
    w.opt(p.nlist);
    w.u64(p.seed);
    w.opt(p.nprobe);
    w.buf
}

fn encode_records(store: &CatalogStore) -> Vec<u8> {
    let mut w = Writer::default();
    w.len(store.len());
    for r in store.records() {
        w.str(&r.id);
        match &r.category {
            Some(c) => {
                w.u8(1);
                w.str(c);
            }
            None => w.u8(0),
        }
        w.f32s(&r.text_vec);
        match &r.image_vec {
            Some(v) => {
                w.u8(1);
                w.f32s(v);
            }
            None => w.u8(0),
        }
    }
    w.buf
}

fn encode_centroids(ix: &IvfIndex) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(ix.metric().code());
    w.len(ix.nlist());
    w.len(ix.dim());
    w.f32s(ix.centroids());
    w.buf
}

fn encode_lists(store: &CatalogStore, ix: &IvfIndex) -> Vec<u8> {
    let ordinal: std::collections::HashMap<&str, usize> =
        store.records().iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut w = Writer::default();
    w.len(ix.nlist());
    for list in ix.lists() {
        w.len(list.len());
        for id in list.ids() {
            w.len(ordinal[id]);
        }
    }
    w.buf
}

fn encode_pca(m: &PcaModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.len(m.source_dim());
    w.len(m.target_dim());
    w.f32s(m.mean());
    w.f32s(m.components());
    w.f32s(m.explained_variance());
    w.buf
}

fn encode_decider(m: &DeciderModel<f32>) -> Vec<u8> {
    let mut w = Writer::default();
    let c = m.config();
    w.len(c.input_dim);
    w.len(c.conv_filters);
    w.len(c.kernel_size);
    w.len(c.hidden_dims.len());
    for &h in &c.hidden_dims {
        w.len(h);
    }
    w.f64(c.dropout_rate);
    w.u64(c.seed);
    let tensors = m.params().tensors();
    w.len(tensors.len());
    for (_, t) in tensors {
        w.len(t.len());
        w.f32s(t);
    }
    w.buf
}

/// Serializes `store` into snapshot bytes.
pub fn to_bytes(store: &CatalogStore) -> Vec<u8> {
    let mut sections = vec![
        (SectionKind::Meta, encode_meta(store)),
        (SectionKind::Records, encode_records(store)),
    ];
    if let Some(ix) = store.index() {
        sections.push((SectionKind::Centroids, encode_centroids(ix)));
        sections.push((SectionKind::Lists, encode_lists(store, ix)));
    }
    if let Some(m) = store.pca_text() {
        sections.push((SectionKind::PcaText, encode_pca(m)));
    }
    if let Some(m) = store.pca_image() {
        sections.push((SectionKind::PcaImage, encode_pca(m)));
    }
    if let Some(m) = store.decider() {
        sections.push((SectionKind::Decider, encode_decider(m)));
    }

    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u16(0);
    w.len(sections.len());
    let mut offset = (HEADER_LEN + sections.len() * ENTRY_LEN + 4) as u64;
    for (kind, payload) in &sections {
        w.u16(*kind as u16);
        w.u16(0);
        w.u64(offset);
        w.u64(payload.len() as u64);
        offset += payload.len() as u64 + 4;
    }
    let head_crc = crc32fast::hash(&w.buf);
    w.u32(head_crc);
    for (_, payload) in &sections {
        w.buf.extend_from_slice(payload);
        w.u32(crc32fast::hash(payload));
    }
    w.buf
}

fn section_name(kind: SectionKind) -> &'static str {
    match kind {
        SectionKind::Meta => "meta",
        SectionKind::Records => "records",
        SectionKind::Centroids => "centroids",
        SectionKind::Lists => "lists",
        SectionKind::PcaText => "text PCA",
        SectionKind::PcaImage => "image PCA",
        SectionKind::Decider => "decider",
    }
}

/// Validates framing and checksums and returns each section's payload.
fn split_sections(bytes: &[u8]) -> Result<Vec<(SectionKind, &[u8])>, SnapshotError> {
    if bytes.len() < 4 {
        return Err(SnapshotError::Truncated("header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(SnapshotError::Truncated("header"));
    }
    let mut r = Reader::new(&bytes[4..HEADER_LEN], "header");
    let version = r.u16()?;
    if version != VERSION {
        return Err(SnapshotError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let _flags = r.u16()?;
    let count = r.len()?;
    let table_end = count
        .checked_mul(ENTRY_LEN)
        .and_then(|t| t.checked_add(HEADER_LEN))
        .ok_or(SnapshotError::Truncated("section table"))?;
    if bytes.len() < table_end + 4 {
        return Err(SnapshotError::Truncated("section table"));
    }
    let stored = u32::from_le_bytes(bytes[table_end..table_end + 4].try_into().unwrap());
    if crc32fast::hash(&bytes[..table_end]) != stored {
        return Err(SnapshotError::Checksum("header"));
    }
    let mut table = Reader::new(&bytes[HEADER_LEN..table_end], "section table");
    let mut out: Vec<(SectionKind, &[u8])> = Vec::with_capacity(count);
    // sections are contiguous and fill the rest of the file
    let mut next = (table_end + 4) as u64;
    for _ in 0..count {
        let kind = table.u16()?;
        let kind = SectionKind::from_u16(kind).ok_or_else(|| malformed(format!("unknown section kind {kind}")))?;
        let _reserved = table.u16()?;
        let offset = table.u64()?;
        let len = table.u64()?;
        if out.iter().any(|(k, _)| *k == kind) {
            return Err(malformed(format!("repeated {} section", section_name(kind))));
        }
        if offset != next {
            return Err(malformed(format!("{} section is not where the table says", section_name(kind))));
        }
        let end = offset
            .checked_add(len)
            .and_then(|e| e.checked_add(4))
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or(SnapshotError::Truncated(section_name(kind)))?;
        let (start, body_end) = (offset as usize, (end - 4) as usize);
        let payload = &bytes[start..body_end];
        let stored = u32::from_le_bytes(bytes[body_end..body_end + 4].try_into().unwrap());
        if crc32fast::hash(payload) != stored {
            return Err(SnapshotError::Checksum(section_name(kind)));
        }
        out.push((kind, payload));
        next = end;
    }
    if next != bytes.len() as u64 {
        return Err(malformed("trailing bytes after the last section"));
    }
    Ok(out)
}

fn decode_pca(payload: &[u8], section: &'static str) -> Result<PcaModel, SnapshotError> {
    let mut r = Reader::new(payload, section);
    let (src, tgt) = (r.len()?, r.len()?);
    let mean = r.vector(src)?;
    let components = r.f32s(tgt.checked_mul(src).ok_or_else(|| malformed("length overflow"))?)?;
    let variance = r.f32s(tgt)?;
    r.finish()?;
    PcaModel::from_parts(mean, components, variance).map_err(|e| malformed(format!("{section}: {e}")))
}

fn decode_decider(payload: &[u8]) -> Result<DeciderModel<f32>, SnapshotError> {
    let mut r = Reader::new(payload, "decider");
    let input_dim = r.len()?;
    let conv_filters = r.len()?;
    let kernel_size = r.len()?;
    let n_hidden = r.len()?;
    if n_hidden > 64 {
        return Err(malformed("decider: implausible layer count"));
    }
    let hidden_dims = (0..n_hidden).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
    let config = DeciderConfig {
        input_dim,
        conv_filters,
        kernel_size,
        hidden_dims,
        dropout_rate: r.f64()?,
        seed: r.u64()?,
    };
    config.validate().map_err(|e| malformed(format!("decider: {e}")))?;
    let mut model = DeciderModel::<f32>::new(config.clone()).map_err(|e| malformed(format!("decider: {e}")))?;
    let n_tensors = r.len()?;
    let mut tensors = model.params_mut().tensors_mut();
    if n_tensors != tensors.len() {
        return Err(malformed("decider: tensor count does not fit config"));
    }
    for t in tensors.iter_mut() {
        let n = r.len()?;
        if n != t.len() {
            return Err(malformed("decider: tensor length does not fit config"));
        }
        t.copy_from_slice(&r.f32s(n)?);
    }
    r.finish()?;
    let params = model.params().clone();
    DeciderModel::from_params(config, params).map_err(|e| malformed(format!("decider: {e}")))
}

/// Decodes snapshot bytes. Nothing is built until every checksum passes.
pub fn from_bytes(bytes: &[u8]) -> Result<CatalogStore, ServiceError> {
    let sections = split_sections(bytes)?;
    let find = |k: SectionKind| sections.iter().find(|(kind, _)| *kind == k).map(|(_, p)| *p);

    let meta = find(SectionKind::Meta).ok_or_else(|| malformed("missing meta section"))?;
    let mut r = Reader::new(meta, "meta");
    let dim = r.len()?;
    let metric = Metric::from_code(r.u8()?).ok_or_else(|| malformed("unknown metric code"))?;
    let params = IndexParams {
        metric,
        nlist: r.opt()?,
        seed: r.u64()?,
        nprobe: r.opt()?,
    };
    r.finish()?;
    if dim == 0 {
        return Err(malformed("zero dimension").into());
    }

    let payload = find(SectionKind::Records).ok_or_else(|| malformed("missing records section"))?;
    let mut r = Reader::new(payload, "records");
    let count = r.len()?;
    let mut records = Vec::with_capacity(count.min(payload.len() / (8 * dim) + 1));
    for _ in 0..count {
        let id = r.str()?;
        let category = match r.u8()? {
            0 => None,
            1 => Some(r.str()?),
            _ => return Err(malformed("records: bad category flag").into()),
        };
        let text_vec = r.vector(dim)?;
        let image_vec = match r.u8()? {
            0 => None,
            1 => Some(r.vector(dim)?),
            _ => return Err(malformed("records: bad image flag").into()),
        };
        records.push(ProductRecord {
            id,
            text_vec,
            image_vec,
            category,
        });
    }
    r.finish()?;

    let index = match (find(SectionKind::Centroids), find(SectionKind::Lists)) {
        (None, None) => None,
        (Some(c), Some(l)) => Some(decode_index(c, l, dim, &records)?),
        _ => return Err(malformed("centroids and lists must appear together").into()),
    };
    let pca_text = find(SectionKind::PcaText).map(|p| decode_pca(p, "text PCA")).transpose()?;
    let pca_image = find(SectionKind::PcaImage).map(|p| decode_pca(p, "image PCA")).transpose()?;
    let decider = find(SectionKind::Decider).map(decode_decider).transpose()?;
    CatalogStore::from_parts(dim, records, index, params, pca_text, pca_image, decider)
}

fn decode_index(
    centroids: &[u8],
    lists: &[u8],
    dim: usize,
    records: &[ProductRecord],
) -> Result<IvfIndex, ServiceError> {
    let mut r = Reader::new(centroids, "centroids");
    let metric = Metric::from_code(r.u8()?).ok_or_else(|| malformed("unknown metric code"))?;
    let nlist = r.len()?;
    if r.len()? != dim {
        return Err(malformed("centroid dimension differs from the store").into());
    }
    let c = r.f32s(nlist.checked_mul(dim).ok_or_else(|| malformed("length overflow"))?)?;
    r.finish()?;

    let mut r = Reader::new(lists, "lists");
    if r.len()? != nlist {
        return Err(malformed("list count differs from centroid count").into());
    }
    let mut parts = Vec::with_capacity(nlist);
    for _ in 0..nlist {
        let n = r.len()?;
        let mut ids = Vec::with_capacity(n.min(records.len()));
        let mut vectors = Vec::with_capacity(n.min(records.len()) * dim);
        for _ in 0..n {
            let ord = r.len()?;
            let rec = records.get(ord).ok_or_else(|| malformed("list entry points past the records"))?;
            ids.push(rec.id.clone());
            vectors.extend(prepare(metric, &rec.text_vec)?);
        }
        parts.push((ids, vectors));
    }
    r.finish()?;
    Ok(IvfIndex::from_parts(dim, metric, c, parts)?)
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn save(store: &CatalogStore, path: &Path) -> Result<(), ServiceError> {
    let bytes = to_bytes(store);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<CatalogStore, ServiceError> {
    from_bytes(&std::fs::read(path)?)
}
