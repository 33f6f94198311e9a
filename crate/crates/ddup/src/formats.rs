//! On-disk formats: ingestion and pair JSONL, decision logs, group
//! documents, training history CSV and PNG / binary PPM images.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ddup_core::decider::EpochRecord;
use ddup_core::{EmbeddingVector, Image, Label, ProductRecord};
use serde::{Deserialize, Serialize};

use crate::catalog::{DuplicateGroup, MatchDecision};
use crate::error::ServiceError;

/// One ingestion line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductLine {
    pub id: String,
    pub text_vec: Vec<f32>,
    #[serde(default)]
    pub image_vec: Option<Vec<f32>>,
    #[serde(default)]
    pub category: Option<String>,
}

impl From<&ProductRecord> for ProductLine {
    fn from(r: &ProductRecord) -> Self {
        Self {
            id: r.id.clone(),
            text_vec: r.text_vec.to_vec(),
            image_vec: r.image_vec.as_ref().map(|v| v.to_vec()),
            category: r.category.clone(),
        }
    }
}

impl ProductLine {
    /// Validated record with the vectors as given (no reduction).
    pub fn into_record(self) -> Result<ProductRecord, ServiceError> {
        if self.id.is_empty() {
            return Err(ServiceError::invalid("id must not be empty"));
        }
        Ok(ProductRecord {
            id: self.id,
            text_vec: EmbeddingVector::new(self.text_vec)?,
            image_vec: self.image_vec.map(EmbeddingVector::new).transpose()?,
            category: self.category,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Match,
    NotMatch,
}

impl From<Label> for PairLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Match => PairLabel::Match,
            Label::NotMatch => PairLabel::NotMatch,
        }
    }
}

impl From<PairLabel> for Label {
    fn from(l: PairLabel) -> Self {
        match l {
            PairLabel::Match => Label::Match,
            PairLabel::NotMatch => Label::NotMatch,
        }
    }
}

fn default_match() -> PairLabel {
    PairLabel::Match
}

/// One labeled id pair. Ground-truth files carry only matches, so the
/// label defaults to `match`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLine {
    pub id_a: String,
    pub id_b: String,
    #[serde(default = "default_match")]
    pub label: PairLabel,
}

fn create(path: &Path) -> Result<BufWriter<File>, ServiceError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), ServiceError> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads every non-blank line as `T`, failing on the first bad one.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ServiceError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| ServiceError::invalid(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_products(path: &Path, records: &[ProductRecord]) -> Result<(), ServiceError> {
    write_jsonl(path, records.iter().map(ProductLine::from))
}

pub fn write_truth(path: &Path, truth: &[(String, String)]) -> Result<(), ServiceError> {
    write_jsonl(
        path,
        truth.iter().map(|(a, b)| PairLine {
            id_a: a.clone(),
            id_b: b.clone(),
            label: PairLabel::Match,
        }),
    )
}

pub fn write_decisions(path: &Path, decisions: &[MatchDecision]) -> Result<(), ServiceError> {
    write_jsonl(path, decisions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupsDocument {
    pub groups: Vec<DuplicateGroup>,
}

pub fn write_groups(path: &Path, groups: &[DuplicateGroup]) -> Result<(), ServiceError> {
    let mut w = create(path)?;
    let doc = GroupsDocument { groups: groups.to_vec() };
    serde_json::to_writer_pretty(&mut w, &doc).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_groups(path: &Path) -> Result<Vec<DuplicateGroup>, ServiceError> {
    let doc: GroupsDocument = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| ServiceError::invalid(format!("{}: {e}", path.display())))?;
    Ok(doc.groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HistoryRow {
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
    lr: f64,
}

/// Training history with columns `epoch,train_loss,val_loss,lr`.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), ServiceError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in history {
        w.serialize(HistoryRow {
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            lr: r.lr,
        })
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>, ServiceError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize::<HistoryRow>()
        .map(|row| {
            let row = row.map_err(csv_error)?;
            Ok(EpochRecord {
                epoch: row.epoch,
                train_loss: row.train_loss,
                val_loss: row.val_loss,
                lr: row.lr,
            })
        })
        .collect()
}

fn csv_error(e: csv::Error) -> ServiceError {
    ServiceError::Io(std::io::Error::other(e))
}

fn image_error(e: image::ImageError) -> ServiceError {
    ServiceError::Io(std::io::Error::other(e))
}

/// Decodes PNG or PPM. Gray sources stay single-channel; everything else
/// becomes RGB.
pub fn read_image(path: &Path) -> Result<Image, ServiceError> {
    let img = image::open(path).map_err(image_error)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(img.color(), image::ColorType::L8 | image::ColorType::L16);
    if gray {
        Ok(Image::new(w, h, 1, img.into_luma8().into_raw())?)
    } else {
        Ok(Image::new(w, h, 3, img.into_rgb8().into_raw())?)
    }
}

/// Encodes by extension: `.png` (gray or RGB) or `.ppm` (binary P6, gray
/// expanded to RGB).
pub fn write_image(path: &Path, img: &Image) -> Result<(), ServiceError> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let (w, h) = (img.width() as u32, img.height() as u32);
    match ext.as_deref() {
        Some("png") => {
            let color = if img.channels() == 1 {
                image::ExtendedColorType::L8
            } else {
                image::ExtendedColorType::Rgb8
            };
            image::save_buffer_with_format(path, img.pixels(), w, h, color, image::ImageFormat::Png)
                .map_err(image_error)
        }
        Some("ppm") => {
            let rgb: Vec<u8> = if img.channels() == 1 {
                img.pixels().iter().flat_map(|&p| [p, p, p]).collect()
            } else {
                img.pixels().to_vec()
            };
            let mut out = create(path)?;
            let encoder = image::codecs::pnm::PnmEncoder::new(&mut out)
                .with_subtype(image::codecs::pnm::PnmSubtype::Pixmap(image::codecs::pnm::SampleEncoding::Binary));
            image::ImageEncoder::write_image(encoder, &rgb, w, h, image::ExtendedColorType::Rgb8)
                .map_err(image_error)?;
            out.flush()?;
            Ok(())
        }
        _ => Err(ServiceError::invalid(format!(
            "{}: image output must end in .png or .ppm",
            path.display()
        ))),
    }
}
