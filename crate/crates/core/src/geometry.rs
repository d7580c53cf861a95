//! Binary masks, boxes, run-length encoding and IoU.
//!
//! Boxes are half-open pixel rectangles `[x_min, x_max) × [y_min, y_max)`, so
//! box area and rasterized pixel counts always agree. Run-length encodings are
//! row-major and always start with a (possibly empty) run of zeros.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("mask must be at least 1x1, got {height}x{width}")));
        }
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "mask has {} bits, expected {height}x{width}",
                bits.len()
            )));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Shape(format!("mask bit values must be 0 or 1, found {b}")));
        }
        Ok(Self { height, width, bits })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0)
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1)
    }

    fn filled(height: usize, width: usize, v: u8) -> Self {
        assert!(height > 0 && width > 0, "mask must be at least 1x1");
        Self {
            height,
            width,
            bits: vec![v; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(y, x) as u8;
            }
        }
        m
    }

    /// Fills the part of `b` that lies inside a `height × width` canvas.
    pub fn from_box(height: usize, width: usize, b: &BBox) -> Self {
        Self::from_fn(height, width, |y, x| b.contains(x, y))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.bits[y * self.width + x] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b == 1)
    }

    /// Mask values as `0.0` / `1.0`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    /// Reads a single-channel (or any) image; pixels above 127 are set.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        let bits = img.pixels().map(|p| (p.0[0] > 127) as u8).collect();
        Self::new(h as usize, w as usize, bits)
    }

    /// Writes a grayscale PNG with 0 for unset and 255 for set pixels.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let data = self.bits.iter().map(|&b| b * 255).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, data)
            .expect("buffer length matches dimensions");
        img.save(path)?;
        Ok(())
    }
}

/// Half-open pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_max < x_min || y_max < y_min {
            return Err(Error::Shape(format!(
                "inverted box ({x_min},{y_min},{x_max},{y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() == 0
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn intersection_area(&self, other: &BBox) -> usize {
        let w = self.x_max.min(other.x_max).saturating_sub(self.x_min.max(other.x_min));
        let h = self.y_max.min(other.y_max).saturating_sub(self.y_min.max(other.y_min));
        w * h
    }
}

/// Row-major run lengths; the first run counts zeros.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLengthEncoding {
    #[serde(rename = "h")]
    pub height: usize,
    #[serde(rename = "w")]
    pub width: usize,
    pub counts: Vec<usize>,
}

impl RunLengthEncoding {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::MalformedEncoding(format!(
                "dimensions must be positive, got {}x{}",
                self.height, self.width
            )));
        }
        let total: usize = self.counts.iter().sum();
        if total != self.height * self.width {
            return Err(Error::MalformedEncoding(format!(
                "counts sum to {total}, expected {}",
                self.height * self.width
            )));
        }
        if let Some(i) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(Error::MalformedEncoding(format!("zero-length run at index {}", i + 1)));
        }
        Ok(())
    }

    /// Number of set pixels, read directly from the odd runs.
    pub fn area(&self) -> usize {
        self.counts.iter().skip(1).step_by(2).sum()
    }
}

pub fn encode_rle(mask: &BinaryMask) -> RunLengthEncoding {
    let mut counts = Vec::new();
    let mut current = 0u8;
    let mut run = 0usize;
    for &b in &mask.bits {
        if b != current {
            counts.push(run);
            run = 0;
            current = b;
        }
        run += 1;
    }
    counts.push(run);
    RunLengthEncoding {
        height: mask.height,
        width: mask.width,
        counts,
    }
}

pub fn decode_rle(rle: &RunLengthEncoding) -> Result<BinaryMask> {
    rle.validate()?;
    let mut bits = Vec::with_capacity(rle.height * rle.width);
    let mut value = 0u8;
    for &c in &rle.counts {
        bits.extend(std::iter::repeat_n(value, c));
        value ^= 1;
    }
    BinaryMask::new(rle.height, rle.width, bits)
}

/// Tightest half-open box around the set pixels.
pub fn mask_to_bbox(mask: &BinaryMask) -> Result<BBox> {
    let mut x_min = usize::MAX;
    let mut y_min = usize::MAX;
    let mut x_max = 0;
    let mut y_max = 0;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(y, x) {
                x_min = x_min.min(x);
                y_min = y_min.min(y);
                x_max = x_max.max(x + 1);
                y_max = y_max.max(y + 1);
            }
        }
    }
    if x_min == usize::MAX {
        return Err(Error::EmptyRegion);
    }
    BBox::new(x_min, y_min, x_max, y_max)
}

pub fn iou_boxes(a: &BBox, b: &BBox) -> Result<f64> {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Err(Error::UndefinedIou);
    }
    Ok(inter as f64 / union as f64)
}

/// IoU between a mask and a box rasterized onto the mask's canvas.
pub fn iou_mask_box(mask: &BinaryMask, b: &BBox) -> Result<f64> {
    let mut inter = 0usize;
    let mut union = 0usize;
    let mut any = false;
    for y in 0..mask.height {
        for x in 0..mask.width {
            let m = mask.get(y, x);
            let r = b.contains(x, y);
            any |= m;
            inter += (m && r) as usize;
            union += (m || r) as usize;
        }
    }
    if !any {
        return Err(Error::EmptyRegion);
    }
    Ok(inter as f64 / union as f64)
}

pub fn mask_area_ratio(mask: &BinaryMask) -> f64 {
    mask.count_ones() as f64 / (mask.height * mask.width) as f64
}

/// Nearest-neighbor resample: output pixel `(y, x)` reads source pixel
/// `(y·h_in / h_out, x·w_in / w_out)` with integer division.
pub fn resize_mask(mask: &BinaryMask, out_h: usize, out_w: usize) -> Result<BinaryMask> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!("resize target must be positive, got {out_h}x{out_w}")));
    }
    if out_h == mask.height && out_w == mask.width {
        return Ok(mask.clone());
    }
    let (h, w) = (mask.height, mask.width);
    Ok(BinaryMask::from_fn(out_h, out_w, |y, x| {
        mask.get(y * h / out_h, x * w / out_w)
    }))
}

/// Set pixels with at least one 4-neighbor that is unset or off-canvas,
/// i.e. `mask − erode₄(mask)`.
pub fn mask_boundary(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height, mask.width);
    BinaryMask::from_fn(h, w, |y, x| {
        if !mask.get(y, x) {
            return false;
        }
        let interior = y > 0
            && x > 0
            && y + 1 < h
            && x + 1 < w
            && mask.get(y - 1, x)
            && mask.get(y + 1, x)
            && mask.get(y, x - 1)
            && mask.get(y, x + 1);
        !interior
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(rows: &[&[u8]]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::new(h, w, rows.concat()).unwrap()
    }

    #[test]
    fn rle_examples() {
        assert_eq!(encode_rle(&BinaryMask::zeros(2, 2)).counts, vec![4]);
        assert_eq!(encode_rle(&BinaryMask::ones(2, 2)).counts, vec![0, 4]);
        let m = mask(&[&[0, 1, 1], &[1, 0, 0]]);
        assert_eq!(encode_rle(&m).counts, vec![1, 3, 2]);

        let dec = |counts: Vec<usize>, h, w| {
            decode_rle(&RunLengthEncoding {
                height: h,
                width: w,
                counts,
            })
            .unwrap()
        };
        assert_eq!(dec(vec![4], 2, 2), BinaryMask::zeros(2, 2));
        assert_eq!(dec(vec![0, 4], 2, 2), BinaryMask::ones(2, 2));
        assert_eq!(dec(vec![1, 3, 2], 2, 3), m);
    }

    #[test]
    fn rle_rejects_bad_sums_and_interior_zeros() {
        let bad = RunLengthEncoding {
            height: 2,
            width: 2,
            counts: vec![1, 2],
        };
        assert!(matches!(decode_rle(&bad), Err(Error::MalformedEncoding(_))));
        let interior = RunLengthEncoding {
            height: 2,
            width: 2,
            counts: vec![1, 0, 3],
        };
        assert!(matches!(decode_rle(&interior), Err(Error::MalformedEncoding(_))));
    }

    #[test]
    fn rle_json_shape() {
        let rle = encode_rle(&mask(&[&[0, 1, 1], &[1, 0, 0]]));
        let s = serde_json::to_string(&rle).unwrap();
        assert_eq!(s, r#"{"h":2,"w":3,"counts":[1,3,2]}"#);
    }

    #[test]
    fn bbox_examples() {
        let mut m = BinaryMask::zeros(8, 8);
        m.set(2, 3, true);
        assert_eq!(mask_to_bbox(&m).unwrap(), BBox::new(3, 2, 4, 3).unwrap());
        assert_eq!(
            mask_to_bbox(&BinaryMask::ones(5, 7)).unwrap(),
            BBox::new(0, 0, 7, 5).unwrap()
        );
        assert!(matches!(mask_to_bbox(&BinaryMask::zeros(3, 3)), Err(Error::EmptyRegion)));
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0, 0, 10, 10).unwrap();
        let b = BBox::new(5, 5, 15, 15).unwrap();
        assert_eq!(iou_boxes(&a, &a).unwrap(), 1.0);
        assert_eq!(iou_boxes(&a, &BBox::new(20, 20, 30, 30).unwrap()).unwrap(), 0.0);
        assert_eq!(iou_boxes(&a, &b).unwrap(), 25.0 / 175.0);
        let z = BBox::new(3, 3, 3, 3).unwrap();
        assert!(matches!(iou_boxes(&z, &z), Err(Error::UndefinedIou)));
    }

    #[test]
    fn mask_box_iou_examples() {
        let b = BBox::new(2, 1, 6, 4).unwrap();
        let m = BinaryMask::from_box(8, 8, &b);
        assert_eq!(iou_mask_box(&m, &b).unwrap(), 1.0);

        let mut p = BinaryMask::zeros(5, 5);
        p.set(4, 0, true);
        assert_eq!(iou_mask_box(&p, &mask_to_bbox(&p).unwrap()).unwrap(), 1.0);

        // diagonal: 10 pixels inside a 10x10 box
        let d = BinaryMask::from_fn(10, 10, |y, x| y == x);
        let v = iou_mask_box(&d, &mask_to_bbox(&d).unwrap()).unwrap();
        assert_eq!(v, 0.1);
        assert!(matches!(
            iou_mask_box(&BinaryMask::zeros(2, 2), &b),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn area_ratio_examples() {
        assert_eq!(mask_area_ratio(&BinaryMask::ones(3, 4)), 1.0);
        assert_eq!(mask_area_ratio(&BinaryMask::zeros(3, 4)), 0.0);
        assert_eq!(mask_area_ratio(&mask(&[&[1, 0, 1], &[0, 1, 0]])), 0.5);
    }

    #[test]
    fn resize_examples() {
        let big = resize_mask(&BinaryMask::ones(7, 5), 336, 336).unwrap();
        assert!(big.is_full());
        let m = mask(&[&[1, 0, 1], &[0, 1, 0]]);
        assert_eq!(resize_mask(&m, 2, 3).unwrap(), m);

        let checker = mask(&[&[1, 0], &[0, 1]]);
        let up = resize_mask(&checker, 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(up.get(y, x), checker.get(y / 2, x / 2));
            }
        }
        assert!(resize_mask(&m, 0, 3).is_err());
    }

    #[test]
    fn boundary_of_filled_square() {
        let m = BinaryMask::from_box(6, 6, &BBox::new(1, 1, 5, 5).unwrap());
        let b = mask_boundary(&m);
        assert_eq!(b.count_ones(), 12);
        assert!(!b.get(2, 2));
        assert!(b.get(1, 3));
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = mask(&[&[1, 0, 1], &[0, 1, 1]]);
        m.save_png(&path).unwrap();
        assert_eq!(BinaryMask::load_png(&path).unwrap(), m);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0u8..2, h * w)
                .prop_map(move |bits| BinaryMask::new(h, w, bits).unwrap())
        })
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0usize..20, 0usize..20, 1usize..12, 1usize..12)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn rle_roundtrip(m in arb_mask()) {
            let rle = encode_rle(&m);
            prop_assert_eq!(rle.counts.iter().sum::<usize>(), m.height() * m.width());
            prop_assert_eq!(rle.area(), m.count_ones());
            prop_assert_eq!(decode_rle(&rle).unwrap(), m);
        }

        #[test]
        fn box_iou_symmetric(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(iou_boxes(&a, &b).unwrap(), iou_boxes(&b, &a).unwrap());
            prop_assert_eq!(iou_boxes(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn mask_vs_own_bbox(m in arb_mask()) {
            prop_assume!(!m.is_empty());
            let b = mask_to_bbox(&m).unwrap();
            let iou = iou_mask_box(&m, &b).unwrap();
            let expected = m.count_ones() as f64 / b.area() as f64;
            prop_assert!((iou - expected).abs() < 1e-12);
            prop_assert_eq!(iou == 1.0, m.count_ones() == b.area());
        }

        #[test]
        fn area_ratio_monotone(m in arb_mask(), y in 0usize..12, x in 0usize..12) {
            let (y, x) = (y % m.height(), x % m.width());
            let mut more = m.clone();
            more.set(y, x, true);
            prop_assert!(mask_area_ratio(&more) >= mask_area_ratio(&m));
        }
    }
}
