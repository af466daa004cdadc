//! Image-plane primitives: points, image dimensions and verification masks.
//!
//! Continuous coordinates map to pixel cells by `floor`, with the closed upper
//! edge (`x == width`) folded into the last column. Points outside
//! `[0, w] x [0, h]` are never members of any mask.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in pixel coordinates of the original image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn in_bounds(&self, dims: ImageMeta) -> bool {
        self.is_finite()
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x <= dims.width as f64
            && self.y <= dims.height as f64
    }

    /// Pixel cell under an in-bounds point.
    pub fn cell(&self, dims: ImageMeta) -> Option<(u32, u32)> {
        if !self.in_bounds(dims) {
            return None;
        }
        let cx = (self.x.floor() as u32).min(dims.width - 1);
        let cy = (self.y.floor() as u32).min(dims.height - 1);
        Some((cx, cy))
    }

    pub fn lerp(self, other: Point2D, t: f64) -> Point2D {
        Point2D::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

impl From<[f64; 2]> for Point2D {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2D::new(x, y)
    }
}

impl From<Point2D> for [f64; 2] {
    fn from(p: Point2D) -> Self {
        [p.x, p.y]
    }
}

/// Euclidean distance in pixels.
pub fn euclidean(p: Point2D, q: Point2D) -> f64 {
    (p.x - q.x).hypot(p.y - q.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageMeta {
    pub width: u32,
    pub height: u32,
}

impl ImageMeta {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn area(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Inclusive cell rectangle. Serialized as `{x0, y0, x1, y1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoxRegion {
    pub fn contains_cell(&self, cx: u32, cy: u32) -> bool {
        cx >= self.x0 && cx <= self.x1 && cy >= self.y0 && cy <= self.y1
    }
}

/// Cells whose centers lie within `r` of `(cx, cy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Disc {
    pub fn contains_cell(&self, cx: u32, cy: u32) -> bool {
        let dx = cx as f64 + 0.5 - self.cx;
        let dy = cy as f64 + 0.5 - self.cy;
        dx * dx + dy * dy <= self.r * self.r
    }
}

/// Row-major run-length encoding: alternating (unset, set) runs starting
/// with unset. `ends[i]` is the exclusive end index of run `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLength {
    counts: Vec<u32>,
    ends: Vec<u64>,
}

impl RunLength {
    fn new(counts: Vec<u32>, dims: ImageMeta) -> Result<Self> {
        let mut ends = Vec::with_capacity(counts.len());
        let mut acc = 0u64;
        for &c in &counts {
            acc += c as u64;
            ends.push(acc);
        }
        if acc != dims.area() as u64 {
            return Err(Error::InvalidMask(format!(
                "run lengths sum to {acc}, expected {}",
                dims.area()
            )));
        }
        Ok(Self { counts, ends })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    fn is_set(&self, index: u64) -> bool {
        let run = self.ends.partition_point(|&end| end <= index);
        run % 2 == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskForm {
    Bitmap(Vec<bool>),
    RunLength(RunLength),
    Boxes(Vec<BoxRegion>),
    Discs(Vec<Disc>),
}

/// Ground-truth verification region over an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    dims: ImageMeta,
    form: MaskForm,
}

impl Mask {
    pub fn from_bitmap(dims: ImageMeta, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.area() {
            return Err(Error::InvalidMask(format!(
                "bitmap has {} cells, expected {}",
                bits.len(),
                dims.area()
            )));
        }
        Ok(Self {
            dims,
            form: MaskForm::Bitmap(bits),
        })
    }

    pub fn from_rle(dims: ImageMeta, counts: Vec<u32>) -> Result<Self> {
        Ok(Self {
            dims,
            form: MaskForm::RunLength(RunLength::new(counts, dims)?),
        })
    }

    pub fn from_boxes(dims: ImageMeta, boxes: Vec<BoxRegion>) -> Result<Self> {
        for b in &boxes {
            if b.x0 > b.x1 || b.y0 > b.y1 || b.x1 >= dims.width || b.y1 >= dims.height {
                return Err(Error::InvalidMask(format!(
                    "box {b:?} is inverted or exceeds {}x{}",
                    dims.width, dims.height
                )));
            }
        }
        Ok(Self {
            dims,
            form: MaskForm::Boxes(boxes),
        })
    }

    pub fn from_discs(dims: ImageMeta, discs: Vec<Disc>) -> Result<Self> {
        for d in &discs {
            let fits = d.r.is_finite()
                && d.r >= 0.0
                && d.cx - d.r >= 0.0
                && d.cy - d.r >= 0.0
                && d.cx + d.r <= dims.width as f64
                && d.cy + d.r <= dims.height as f64;
            if !fits {
                return Err(Error::InvalidMask(format!(
                    "disc {d:?} exceeds {}x{}",
                    dims.width, dims.height
                )));
            }
        }
        Ok(Self {
            dims,
            form: MaskForm::Discs(discs),
        })
    }

    pub fn dims(&self) -> ImageMeta {
        self.dims
    }

    pub fn form(&self) -> &MaskForm {
        &self.form
    }

    /// Membership of a single pixel cell. Cells outside the image are unset.
    pub fn cell_is_set(&self, cx: u32, cy: u32) -> bool {
        if cx >= self.dims.width || cy >= self.dims.height {
            return false;
        }
        let index = cy as usize * self.dims.width as usize + cx as usize;
        match &self.form {
            MaskForm::Bitmap(bits) => bits[index],
            MaskForm::RunLength(rle) => rle.is_set(index as u64),
            MaskForm::Boxes(boxes) => boxes.iter().any(|b| b.contains_cell(cx, cy)),
            MaskForm::Discs(discs) => discs.iter().any(|d| d.contains_cell(cx, cy)),
        }
    }

    /// True iff the pixel cell under `p` is set. Out-of-bounds points are never members.
    pub fn contains(&self, p: Point2D) -> bool {
        match p.cell(self.dims) {
            Some((cx, cy)) => self.cell_is_set(cx, cy),
            None => false,
        }
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        match &self.form {
            MaskForm::Bitmap(bits) => bits.clone(),
            MaskForm::RunLength(rle) => {
                let mut bits = Vec::with_capacity(self.dims.area());
                for (i, &c) in rle.counts.iter().enumerate() {
                    bits.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
                }
                bits
            }
            _ => {
                let mut bits = vec![false; self.dims.area()];
                for cy in 0..self.dims.height {
                    for cx in 0..self.dims.width {
                        bits[cy as usize * self.dims.width as usize + cx as usize] =
                            self.cell_is_set(cx, cy);
                    }
                }
                bits
            }
        }
    }

    pub fn to_rle_counts(&self) -> Vec<u32> {
        if let MaskForm::RunLength(rle) = &self.form {
            return rle.counts.clone();
        }
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for bit in self.to_bitmap() {
            if bit != current {
                counts.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
        counts.push(run);
        counts
    }

    /// Decompose into one box per horizontal run of set cells.
    pub fn to_row_boxes(&self) -> Vec<BoxRegion> {
        let w = self.dims.width;
        let mut boxes = Vec::new();
        for cy in 0..self.dims.height {
            let mut cx = 0;
            while cx < w {
                if self.cell_is_set(cx, cy) {
                    let start = cx;
                    while cx + 1 < w && self.cell_is_set(cx + 1, cy) {
                        cx += 1;
                    }
                    boxes.push(BoxRegion {
                        x0: start,
                        y0: cy,
                        x1: cx,
                        y1: cy,
                    });
                }
                cx += 1;
            }
        }
        boxes
    }

    pub fn set_count(&self) -> usize {
        match &self.form {
            MaskForm::RunLength(rle) => rle
                .counts
                .iter()
                .skip(1)
                .step_by(2)
                .map(|&c| c as usize)
                .sum(),
            _ => self.to_bitmap().iter().filter(|&&b| b).count(),
        }
    }

    /// Mean of set-cell centers; cell `(i, j)` contributes `(i + 0.5, j + 0.5)`.
    pub fn centroid(&self) -> Result<Point2D> {
        let w = self.dims.width as u64;
        let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0u64);
        let mut add = |index: u64| {
            sx += (index % w) as f64 + 0.5;
            sy += (index / w) as f64 + 0.5;
            n += 1;
        };
        match &self.form {
            MaskForm::RunLength(rle) => {
                let mut start = 0u64;
                for (i, (&c, &end)) in rle.counts.iter().zip(&rle.ends).enumerate() {
                    if i % 2 == 1 && c > 0 {
                        (start..end).for_each(&mut add);
                    }
                    start = end;
                }
            }
            _ => {
                for (index, bit) in self.to_bitmap().into_iter().enumerate() {
                    if bit {
                        add(index as u64);
                    }
                }
            }
        }
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(Point2D::new(sx / n as f64, sy / n as f64))
    }

    /// Read an 8-bit grayscale image; any nonzero pixel is set.
    pub fn read_bitmap(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
            .to_luma8();
        let dims = ImageMeta::new(img.width(), img.height())?;
        let bits = img.pixels().map(|p| p.0[0] != 0).collect();
        Mask::from_bitmap(dims, bits)
    }

    /// Write as an 8-bit grayscale image (0 = unset, 255 = set).
    pub fn write_bitmap(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let data = self
            .to_bitmap()
            .into_iter()
            .map(|b| if b { 255u8 } else { 0 })
            .collect();
        let img = image::GrayImage::from_raw(self.dims.width, self.dims.height, data)
            .expect("bitmap length matches dims");
        img.save(path).map_err(|e| Error::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// JSON form of a mask. Dimensions are always explicit; the payload is one of
/// `rle`, `boxes`, `discs` or `bitmap` (an image path).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub source: MaskSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    Rle(Vec<u32>),
    Boxes(Vec<BoxRegion>),
    Discs(Vec<Disc>),
    Bitmap(String),
}

impl MaskSpec {
    /// Build the mask; relative bitmap paths resolve against `base_dir`.
    pub fn load(&self, base_dir: Option<&Path>) -> Result<Mask> {
        let dims = ImageMeta::new(self.width, self.height)?;
        match &self.source {
            MaskSource::Rle(counts) => Mask::from_rle(dims, counts.clone()),
            MaskSource::Boxes(boxes) => Mask::from_boxes(dims, boxes.clone()),
            MaskSource::Discs(discs) => Mask::from_discs(dims, discs.clone()),
            MaskSource::Bitmap(file) => {
                let path = match base_dir {
                    Some(dir) => dir.join(file),
                    None => file.into(),
                };
                let mask = Mask::read_bitmap(&path)?;
                if mask.dims != dims {
                    return Err(Error::InvalidMask(format!(
                        "bitmap {} is {}x{}, expected {}x{}",
                        path.display(),
                        mask.dims.width,
                        mask.dims.height,
                        dims.width,
                        dims.height
                    )));
                }
                Ok(mask)
            }
        }
    }

    pub fn from_mask_rle(mask: &Mask) -> Self {
        MaskSpec {
            width: mask.dims.width,
            height: mask.dims.height,
            source: MaskSource::Rle(mask.to_rle_counts()),
        }
    }
}

pub fn boxes_to_json(boxes: &[BoxRegion]) -> String {
    serde_json::to_string(boxes).expect("boxes serialize")
}

pub fn boxes_from_json(text: &str) -> Result<Vec<BoxRegion>> {
    Ok(serde_json::from_str(text)?)
}
