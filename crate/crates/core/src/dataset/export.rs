//! COCO-style annotation files and YOLO-style label files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetManifest, Result, Split};
use crate::spectrogram::{PixelBox, IMAGE_SIZE};
use crate::waveform::BoxClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, width, height]` in pixels.
    pub bbox: [f64; 4],
    pub area: f64,
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDocument {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// One labelled box recovered from an export, keyed by capture id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub capture_id: String,
    pub class: BoxClass,
    pub bbox: PixelBox,
}

fn category_id(class: BoxClass) -> u64 {
    class.index() as u64 + 1
}

/// COCO document for the successful captures of one split. Image ids are
/// 1-based in manifest order; annotation ids run across the split.
pub fn coco_document(manifest: &DatasetManifest, split: Split) -> CocoDocument {
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for record in manifest.split(split).filter(|r| r.image_path.is_some()) {
        let image_id = images.len() as u64 + 1;
        images.push(CocoImage {
            id: image_id,
            file_name: format!("{}.png", record.capture_id),
            width: IMAGE_SIZE as u32,
            height: IMAGE_SIZE as u32,
        });
        for b in &record.boxes {
            let p = b.pixel;
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id: category_id(b.class),
                bbox: [p.x0, p.y0, p.width(), p.height()],
                area: p.area(),
                iscrowd: 0,
            });
        }
    }
    CocoDocument {
        images,
        annotations,
        categories: BoxClass::ALL
            .iter()
            .map(|&c| CocoCategory {
                id: category_id(c),
                name: c.name().into(),
            })
            .collect(),
    }
}

pub fn export_coco(manifest: &DatasetManifest, split: Split, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&coco_document(manifest, split))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn import_coco(path: &Path) -> Result<Vec<LabelRecord>> {
    let doc: CocoDocument = serde_json::from_str(&fs::read_to_string(path)?)?;
    let label_err = |reason: String| DatasetError::Label {
        path: path.display().to_string(),
        reason,
    };
    let mut out = Vec::with_capacity(doc.annotations.len());
    for a in &doc.annotations {
        let image = doc
            .images
            .iter()
            .find(|i| i.id == a.image_id)
            .ok_or_else(|| label_err(format!("annotation {} names unknown image {}", a.id, a.image_id)))?;
        let name = doc
            .categories
            .iter()
            .find(|c| c.id == a.category_id)
            .ok_or_else(|| label_err(format!("unknown category {}", a.category_id)))?;
        let class = BoxClass::from_name(&name.name)
            .ok_or_else(|| label_err(format!("unknown class name {}", name.name)))?;
        let [x, y, w, h] = a.bbox;
        out.push(LabelRecord {
            capture_id: image.file_name.trim_end_matches(".png").to_string(),
            class,
            bbox: PixelBox::new(x, y, x + w, y + h),
        });
    }
    Ok(out)
}

/// `class cx cy w h`, normalized by the image size.
pub fn yolo_line(class: BoxClass, b: &PixelBox) -> String {
    let s = IMAGE_SIZE as f64;
    format!(
        "{} {:?} {:?} {:?} {:?}",
        class.index(),
        (b.x0 + b.x1) / 2.0 / s,
        (b.y0 + b.y1) / 2.0 / s,
        b.width() / s,
        b.height() / s
    )
}

/// One `<capture_id>.txt` per successful capture of the split in `dir`.
pub fn export_yolo(manifest: &DatasetManifest, split: Split, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for record in manifest.split(split).filter(|r| r.image_path.is_some()) {
        let mut text = String::new();
        for b in &record.boxes {
            text.push_str(&yolo_line(b.class, &b.pixel));
            text.push('\n');
        }
        fs::write(dir.join(format!("{}.txt", record.capture_id)), text)?;
    }
    Ok(())
}

/// Reads every `.txt` label file in `dir`, sorted by file name.
pub fn import_yolo(dir: &Path) -> Result<Vec<LabelRecord>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "txt"));
    paths.sort();
    let s = IMAGE_SIZE as f64;
    let mut out = Vec::new();
    for path in paths {
        let capture_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for (n, line) in fs::read_to_string(&path)?.lines().enumerate() {
            let label_err = |reason: &str| DatasetError::Label {
                path: path.display().to_string(),
                reason: format!("line {}: {reason}", n + 1),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(label_err("expected 5 fields"));
            }
            let class = fields[0]
                .parse::<usize>()
                .ok()
                .and_then(BoxClass::from_index)
                .ok_or_else(|| label_err("bad class index"))?;
            let v = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| label_err("bad number"))?;
            let (cx, cy, w, h) = (v[0] * s, v[1] * s, v[2] * s, v[3] * s);
            out.push(LabelRecord {
                capture_id: capture_id.clone(),
                class,
                bbox: PixelBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0),
            });
        }
    }
    Ok(out)
}
