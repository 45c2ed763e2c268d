use crate::error::{Error, Result};

/// Axis-aligned box in corner form, image pixels. `(x0, y0)` is the top-left
/// corner and `(x1, y1)` the bottom-right one.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    /// Like [`BBox::new`] but rejects empty or non-finite boxes.
    pub fn checked(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BBox::new(x0, y0, x1, y1);
        if b.is_well_formed() {
            Ok(b)
        } else {
            Err(Error::DegenerateBox { x0, y0, x1, y1 })
        }
    }

    /// From the `x,y,w,h` (top-left + size) form used on disk.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x0, self.y0, self.width(), self.height()]
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn size(&self) -> (f64, f64) {
        (self.width(), self.height())
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_well_formed(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite())
            && self.x0 < self.x1
            && self.y0 < self.y1
    }

    pub fn require_well_formed(&self) -> Result<()> {
        if self.is_well_formed() {
            Ok(())
        } else {
            Err(Error::DegenerateBox {
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
            })
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xywh_roundtrip() {
        let b = BBox::from_xywh(3.0, 4.0, 10.0, 6.0);
        assert_eq!(b, BBox::new(3.0, 4.0, 13.0, 10.0));
        assert_eq!(b.to_xywh(), [3.0, 4.0, 10.0, 6.0]);
        assert_eq!(b.center(), (8.0, 7.0));
    }

    #[test]
    fn degenerate_rejected() {
        assert!(BBox::checked(1.0, 1.0, 1.0, 5.0).is_err());
        assert!(BBox::checked(0.0, 0.0, f64::NAN, 5.0).is_err());
        assert!(BBox::checked(0.0, 0.0, 1.0, 5.0).is_ok());
    }
}
