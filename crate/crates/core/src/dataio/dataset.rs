use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{parse_lines, read_jsonl, ImageRecord};
use crate::error::{Error, Result};
use crate::raster::Image;

/// On-disk layout: `root/{images,annotations,proposals,models,reports}/split/`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPaths {
    pub root: PathBuf,
    pub split: String,
}

impl SplitPaths {
    pub fn new(root: impl Into<PathBuf>, split: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            split: split.into(),
        }
    }

    fn dir(&self, kind: &str) -> PathBuf {
        self.root.join(kind).join(&self.split)
    }

    pub fn images_dir(&self) -> PathBuf {
        self.dir("images")
    }

    pub fn image_index(&self) -> PathBuf {
        self.images_dir().join("index.jsonl")
    }

    pub fn annotations(&self) -> PathBuf {
        self.dir("annotations").join("gt.jsonl")
    }

    pub fn proposals(&self, name: &str) -> PathBuf {
        self.dir("proposals").join(format!("{name}.jsonl"))
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.dir("models").join(format!("{name}.dbox"))
    }

    pub fn reports_dir(&self, name: &str) -> PathBuf {
        self.dir("reports").join(name)
    }
}

/// One line of the image index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    /// File name relative to the split's image directory.
    pub file: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub paths: SplitPaths,
    pub images: Vec<ImageEntry>,
    /// Ground truth, parallel to `images` (empty records for unannotated images).
    pub annotations: Vec<ImageRecord>,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    /// Open a split, checking that every annotation refers to an indexed
    /// image and that every indexed file exists.
    pub fn open(paths: SplitPaths) -> Result<Self> {
        let index_path = paths.image_index();
        let text = std::fs::read_to_string(&index_path)
            .map_err(|e| Error::io(format!("reading {}", index_path.display()), e))?;
        let images: Vec<ImageEntry> = parse_lines(&text, &index_path, |e: &ImageEntry| {
            if e.width == 0 || e.height == 0 {
                Err(format!("{} has zero size", e.image_id))
            } else {
                Ok(())
            }
        })?;
        let mut by_id = HashMap::with_capacity(images.len());
        for (i, e) in images.iter().enumerate() {
            if by_id.insert(e.image_id.clone(), i).is_some() {
                return Err(Error::Record {
                    path: index_path.clone(),
                    line: i + 1,
                    message: format!("duplicate image_id {:?}", e.image_id),
                });
            }
            let f = paths.images_dir().join(&e.file);
            if !f.is_file() {
                return Err(Error::Data(format!("image file {} is missing", f.display())));
            }
        }
        let ann_path = paths.annotations();
        let mut annotations: Vec<ImageRecord> = images
            .iter()
            .map(|e| ImageRecord::new(e.image_id.clone(), Vec::new()))
            .collect();
        if ann_path.is_file() {
            for (line, rec) in read_jsonl(&ann_path)?.into_iter().enumerate() {
                let Some(&i) = by_id.get(&rec.image_id) else {
                    return Err(Error::Record {
                        path: ann_path,
                        line: line + 1,
                        message: format!("unknown image_id {:?}", rec.image_id),
                    });
                };
                let e = &images[i];
                if let Some(b) = rec
                    .boxes
                    .iter()
                    .find(|b| !b.is_inside(e.width as f64, e.height as f64))
                {
                    return Err(Error::Record {
                        path: ann_path,
                        line: line + 1,
                        message: format!(
                            "box {:?} outside the {}x{} image",
                            b.to_array(),
                            e.width,
                            e.height
                        ),
                    });
                }
                annotations[i] = rec;
            }
        }
        Ok(Self {
            paths,
            images,
            annotations,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn index_of(&self, image_id: &str) -> Option<usize> {
        self.by_id.get(image_id).copied()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.paths.images_dir().join(&self.images[i].file)
    }

    /// Decode image `i`, checking its size against the index.
    pub fn load_image(&self, i: usize) -> Result<Image> {
        let e = &self.images[i];
        let path = self.image_path(i);
        let img = Image::load_png(&path)?;
        if img.width() != e.width || img.height() != e.height {
            return Err(Error::Image {
                path,
                message: format!(
                    "decoded {}x{}, index says {}x{}",
                    img.width(),
                    img.height(),
                    e.width,
                    e.height
                ),
            });
        }
        Ok(img)
    }

    /// Read a proposal file and align it with the image index. Unknown image
    /// ids are rejected with their line number.
    pub fn load_proposals(&self, path: &Path) -> Result<Vec<Option<ImageRecord>>> {
        let mut out = vec![None; self.len()];
        for (line, rec) in read_jsonl(path)?.into_iter().enumerate() {
            let Some(i) = self.index_of(&rec.image_id) else {
                return Err(Error::Record {
                    path: path.to_path_buf(),
                    line: line + 1,
                    message: format!("unknown image_id {:?}", rec.image_id),
                });
            };
            out[i] = Some(rec);
        }
        Ok(out)
    }

    /// Per-channel pixel mean over every image of the split.
    pub fn channel_means(&self) -> Result<[f32; 3]> {
        let sums = crate::par::map_indexed(self.len(), |i| -> Result<([f64; 3], f64)> {
            let img = self.load_image(i)?;
            let m = img.channel_means();
            Ok((m, (img.width() * img.height()) as f64))
        });
        let mut acc = [0.0f64; 3];
        let mut n = 0.0;
        for s in sums {
            let (m, px) = s?;
            for c in 0..3 {
                acc[c] += m[c] * px;
            }
            n += px;
        }
        if n == 0.0 {
            return Err(Error::Data("cannot compute means over an empty split".into()));
        }
        Ok(acc.map(|v| (v / n) as f32))
    }
}

pub(crate) fn write_index(paths: &SplitPaths, entries: &[ImageEntry]) -> Result<()> {
    super::write_atomic(&paths.image_index(), &super::to_jsonl(entries)?)
}
