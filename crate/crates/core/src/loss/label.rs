use crate::error::{Error, Result};
use crate::grid::Grid;

/// Annotation consensus together with the pixel sets the losses need.
///
/// * positive: `y > delta` (also the edge set used as tracing centres)
/// * negative: `y == 0`
/// * excluded: `0 < y <= delta`, supervised by nothing
/// * buffer: dilation of the edge set by the `k_bdry × k_bdry` box
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLabel {
    consensus: Grid,
    delta: f64,
    k_bdry: usize,
    positive: Grid,
    negative: Grid,
    excluded: Grid,
    buffer: Grid,
    edges: Vec<(usize, usize)>,
    num_negative: usize,
}

impl EdgeLabel {
    pub fn derive(consensus: &Grid, delta: f64, k_bdry: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidArgument(format!("delta must lie in [0, 1), got {delta}")));
        }
        if k_bdry % 2 == 0 {
            return Err(Error::InvalidArgument(format!("k_bdry must be odd, got {k_bdry}")));
        }
        if consensus.channels() != 1 {
            return Err(Error::Shape(format!(
                "consensus must be single-channel, got {} channels",
                consensus.channels()
            )));
        }
        if let Some(v) = consensus.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("consensus value {v} outside [0, 1]")));
        }
        let (h, w, _) = consensus.shape();
        let positive = consensus.map(|y| f64::from(u8::from(y > delta)));
        let negative = consensus.map(|y| f64::from(u8::from(y == 0.0)));
        let excluded = consensus.map(|y| f64::from(u8::from(y > 0.0 && y <= delta)));
        let mut edges = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if positive.at(y, x) > 0.0 {
                    edges.push((y, x));
                }
            }
        }
        let buffer = dilate_box(&positive, k_bdry);
        let num_negative = negative.data().iter().filter(|&&v| v > 0.0).count();
        Ok(Self {
            consensus: consensus.clone(),
            delta,
            k_bdry,
            positive,
            negative,
            excluded,
            buffer,
            edges,
            num_negative,
        })
    }

    pub fn consensus(&self) -> &Grid {
        &self.consensus
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn k_bdry(&self) -> usize {
        self.k_bdry
    }

    pub fn height(&self) -> usize {
        self.consensus.height()
    }

    pub fn width(&self) -> usize {
        self.consensus.width()
    }

    /// 0/1 mask of `Y⁺`.
    pub fn positive_mask(&self) -> &Grid {
        &self.positive
    }

    /// 0/1 mask of `Y⁻`.
    pub fn negative_mask(&self) -> &Grid {
        &self.negative
    }

    pub fn excluded_mask(&self) -> &Grid {
        &self.excluded
    }

    /// 0/1 mask of the buffer zone around edges.
    pub fn buffer_mask(&self) -> &Grid {
        &self.buffer
    }

    /// Edge pixels `(y, x)` in row-major order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_positive(&self) -> usize {
        self.edges.len()
    }

    pub fn num_negative(&self) -> usize {
        self.num_negative
    }

    /// Share of negatives among supervised pixels, `|Y⁻| / (|Y⁺| + |Y⁻|)`.
    pub fn alpha(&self) -> Result<f64> {
        let total = self.num_positive() + self.num_negative();
        if total == 0 {
            return Err(Error::EmptySupervision);
        }
        Ok(self.num_negative() as f64 / total as f64)
    }

    /// 0/1 mask of texture-suppression centres: negatives outside the buffer.
    pub fn texture_centers(&self) -> Grid {
        let data = self
            .negative
            .data()
            .iter()
            .zip(self.buffer.data())
            .map(|(&n, &b)| if n > 0.0 && b == 0.0 { 1.0 } else { 0.0 })
            .collect();
        Grid::from_vec(self.height(), self.width(), 1, data).expect("same shape")
    }
}

/// Binary dilation by a `k × k` box, clipped at the borders.
pub fn dilate_box(mask: &Grid, k: usize) -> Grid {
    let (h, w, _) = mask.shape();
    let r = k / 2;
    let mut out = Grid::zeros(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            if mask.at(y, x) == 0.0 {
                continue;
            }
            for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    out.set(0, yy, xx, 1.0);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(g: &Grid) -> usize {
        g.data().iter().filter(|&&v| v > 0.0).count()
    }

    #[test]
    fn all_zero_consensus() {
        let l = EdgeLabel::derive(&Grid::zeros(5, 5, 1), 0.0, 7).unwrap();
        assert!(l.edges().is_empty());
        assert_eq!(count(l.buffer_mask()), 0);
        assert_eq!(l.alpha().unwrap(), 1.0);
    }

    #[test]
    fn centre_pixel_buffer_covers_image() {
        let mut c = Grid::zeros(7, 7, 1);
        c.set(0, 3, 3, 1.0);
        let l = EdgeLabel::derive(&c, 0.0, 7).unwrap();
        assert_eq!(count(l.buffer_mask()), 49);
        assert_eq!(count(&l.texture_centers()), 0);
    }

    #[test]
    fn corner_pixel_buffer_is_clipped() {
        let mut c = Grid::zeros(6, 6, 1);
        c.set(0, 0, 0, 1.0);
        let l = EdgeLabel::derive(&c, 0.0, 3).unwrap();
        let b = l.buffer_mask();
        assert_eq!(count(b), 4);
        for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(b.at(y, x), 1.0);
        }
    }

    #[test]
    fn masks_partition_pixels() {
        let c = Grid::from_rows(&[[0.0, 0.2, 0.4], [0.6, 1.0, 0.0]]);
        let l = EdgeLabel::derive(&c, 0.3, 3).unwrap();
        for i in 0..6 {
            let s = l.positive_mask().data()[i] + l.negative_mask().data()[i] + l.excluded_mask().data()[i];
            assert_eq!(s, 1.0);
        }
        assert_eq!(l.num_positive(), 3);
        assert_eq!(l.num_negative(), 2);
        assert!((l.alpha().unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        let c = Grid::zeros(3, 3, 1);
        assert!(EdgeLabel::derive(&c, 1.0, 3).is_err());
        assert!(EdgeLabel::derive(&c, 0.0, 4).is_err());
        assert!(EdgeLabel::derive(&Grid::filled(2, 2, 1, 1.5), 0.0, 3).is_err());
    }
}
