//! Boolean region masks, erosion and connected components.

use crate::error::{Error, Result};

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Linear indices of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn check_shape(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::ShapeMismatch {
                context: "mask size",
                expected: width * height,
                actual: self.width * self.height,
            });
        }
        Ok(())
    }

    /// Morphological erosion with a `k × k` all-ones element; pixels outside
    /// the image count as unset.
    pub fn erode(&self, k: usize) -> Result<Mask> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "erosion kernel must be odd and positive, got {k}"
            )));
        }
        let r = k / 2;
        let (w, h) = (self.width, self.height);
        // A separable pass per axis: a pixel survives iff the whole run of
        // `k` neighbors along that axis is set and in bounds.
        let horizontal = Mask::from_fn(w, h, |x, y| {
            x >= r && x + r < w && (x - r..=x + r).all(|xx| self.get(xx, y))
        });
        Ok(Mask::from_fn(w, h, |x, y| {
            y >= r && y + r < h && (y - r..=y + r).all(|yy| horizontal.get(x, yy))
        }))
    }
}

/// [`Mask::erode`] as a free function.
pub fn erode_mask(mask: &Mask, k: usize) -> Result<Mask> {
    mask.erode(k)
}

/// 4-connected components of equal-label pixels, in row-major order of their
/// first pixel. Pixels whose label is `None` belong to no component.
pub fn connected_components(
    width: usize,
    height: usize,
    label: impl Fn(usize) -> Option<u16>,
) -> Vec<Mask> {
    let n = width * height;
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let Some(l) = label(start) else {
            seen[start] = true;
            continue;
        };
        let mut mask = Mask::empty(width, height);
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            mask.data[p] = true;
            let (x, y) = (p % width, p / width);
            let mut visit = |q: usize| {
                if !seen[q] && label(q) == Some(l) {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
        out.push(mask);
    }
    out
}

/// The 4-connected component containing pixel `seed`, or an empty mask when
/// the seed has no label.
pub fn component_at(
    width: usize,
    height: usize,
    seed: usize,
    label: impl Fn(usize) -> Option<u16>,
) -> Mask {
    let mut mask = Mask::empty(width, height);
    let Some(l) = label(seed) else {
        return mask;
    };
    let mut stack = vec![seed];
    mask.data[seed] = true;
    while let Some(p) = stack.pop() {
        let (x, y) = (p % width, p / width);
        let neighbors = [
            (x > 0).then(|| p - 1),
            (x + 1 < width).then(|| p + 1),
            (y > 0).then(|| p - width),
            (y + 1 < height).then(|| p + width),
        ];
        for q in neighbors.into_iter().flatten() {
            if !mask.data[q] && label(q) == Some(l) {
                mask.data[q] = true;
                stack.push(q);
            }
        }
    }
    mask
}
