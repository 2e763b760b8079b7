//! Shared value types: image planes, spectra, and multi-channel images.

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::{Error, Result};

/// A real-valued plane: one image channel, a weight matrix, or a residual map.
pub type RealMatrix = Array2<f64>;

/// A complex-valued plane: the frequency representation of one channel.
pub type ComplexMatrix = Array2<Complex64>;

/// Whether a test sample is defect-free or defective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }
}

/// A multi-channel image stored as one plane per channel.
///
/// Intensities are nominally in `[0, 1]`; the constructor only enforces
/// structural invariants (1 or 3 channels, equal plane shapes, finite
/// values) so that out-of-range test fixtures can still be built.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    planes: Vec<RealMatrix>,
}

impl Image {
    pub fn new(planes: Vec<RealMatrix>) -> Result<Self> {
        if planes.len() != 1 && planes.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "an image has 1 or 3 channels, got {}",
                planes.len()
            )));
        }
        let dim = planes[0].dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(Error::InvalidArgument("empty image plane".into()));
        }
        for plane in &planes {
            if plane.dim() != dim {
                return Err(Error::shape(
                    format!("all planes {}x{}", dim.0, dim.1),
                    format!("{}x{}", plane.dim().0, plane.dim().1),
                ));
            }
            if plane.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite intensity".into()));
            }
        }
        Ok(Image { planes })
    }

    /// Single-channel image from one plane.
    pub fn from_plane(plane: RealMatrix) -> Result<Self> {
        Image::new(vec![plane])
    }

    /// Grayscale plane replicated to three channels.
    pub fn gray_to_rgb(plane: RealMatrix) -> Result<Self> {
        Image::new(vec![plane.clone(), plane.clone(), plane])
    }

    pub fn height(&self) -> usize {
        self.planes[0].dim().0
    }

    pub fn width(&self) -> usize {
        self.planes[0].dim().1
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[RealMatrix] {
        &self.planes
    }

    pub fn plane(&self, c: usize) -> &RealMatrix {
        &self.planes[c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels() == other.channels()
            && self.height() == other.height()
            && self.width() == other.width()
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height(), self.width(), self.channels())
    }

    /// Channels-first tensor view used by the model.
    pub fn to_chw(&self) -> Array3<f64> {
        let (h, w) = (self.height(), self.width());
        let mut out = Array3::zeros((self.channels(), h, w));
        for (c, plane) in self.planes.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), c).assign(plane);
        }
        out
    }

    /// Inverse of [`Image::to_chw`].
    pub fn from_chw(tensor: &Array3<f64>) -> Result<Self> {
        let planes = (0..tensor.dim().0)
            .map(|c| tensor.index_axis(ndarray::Axis(0), c).to_owned())
            .collect();
        Image::new(planes)
    }

    /// Copy with every intensity clamped to `[0, 1]`.
    pub fn clamped(&self) -> Image {
        Image {
            planes: self
                .planes
                .iter()
                .map(|p| p.mapv(|v| v.clamp(0.0, 1.0)))
                .collect(),
        }
    }

    /// Per-pixel addition of a constant to every channel, without clamping.
    pub fn offset(&self, c: f64) -> Image {
        Image {
            planes: self.planes.iter().map(|p| p.mapv(|v| v + c)).collect(),
        }
    }
}

/// Per-pixel derivative of a loss with respect to a reconstruction.
///
/// Mirrors the shape of the reconstruction it was computed against.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientImage {
    planes: Vec<RealMatrix>,
}

impl GradientImage {
    pub fn new(planes: Vec<RealMatrix>) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::InvalidArgument("empty gradient".into()));
        }
        let dim = planes[0].dim();
        for plane in &planes {
            if plane.dim() != dim {
                return Err(Error::shape(
                    format!("all planes {}x{}", dim.0, dim.1),
                    format!("{}x{}", plane.dim().0, plane.dim().1),
                ));
            }
        }
        Ok(GradientImage { planes })
    }

    pub fn zeros_like(image: &Image) -> GradientImage {
        GradientImage {
            planes: (0..image.channels())
                .map(|_| RealMatrix::zeros((image.height(), image.width())))
                .collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[RealMatrix] {
        &self.planes
    }

    pub fn plane(&self, c: usize) -> &RealMatrix {
        &self.planes[c]
    }

    pub fn to_chw(&self) -> Array3<f64> {
        let (h, w) = self.planes[0].dim();
        let mut out = Array3::zeros((self.planes.len(), h, w));
        for (c, plane) in self.planes.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), c).assign(plane);
        }
        out
    }

    /// Largest absolute entry, across all channels.
    pub fn max_abs(&self) -> f64 {
        self.planes
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Copy with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> GradientImage {
        GradientImage {
            planes: self.planes.iter().map(|p| p * factor).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn image_rejects_bad_channel_counts() {
        let p = RealMatrix::zeros((2, 2));
        assert!(Image::new(vec![p.clone(), p.clone()]).is_err());
        assert!(Image::new(vec![p.clone()]).is_ok());
        assert!(Image::new(vec![p.clone(), p.clone(), p]).is_ok());
    }

    #[test]
    fn image_rejects_mismatched_planes() {
        let a = RealMatrix::zeros((2, 2));
        let b = RealMatrix::zeros((2, 3));
        let c = RealMatrix::zeros((2, 2));
        assert!(Image::new(vec![a, b, c]).is_err());
    }

    #[test]
    fn image_rejects_non_finite() {
        let p = array![[0.0, f64::NAN]];
        assert!(Image::from_plane(p).is_err());
    }

    #[test]
    fn chw_round_trip() {
        let img = Image::gray_to_rgb(array![[0.1, 0.2], [0.3, 0.4]]).unwrap();
        let back = Image::from_chw(&img.to_chw()).unwrap();
        assert_eq!(img, back);
    }
}
