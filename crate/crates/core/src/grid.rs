//! Dense H×W containers: depth maps, flow fields, images and scalar fields.
//!
//! Pixel `(u, v)` is column `u`, row `v`; storage is row-major. Every field
//! carries a validity mask; degenerate pixels are masked rather than raised.

use crate::ad::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid { width, height, data: vec![value; width * height] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Grid { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Grid { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        &mut self.data[v * self.width + u]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }

    /// True for pixels not on the outermost ring.
    #[inline]
    pub fn is_interior(&self, u: usize, v: usize) -> bool {
        u > 0 && v > 0 && u + 1 < self.width && v + 1 < self.height
    }
}

pub(crate) fn check_shape<A, B>(a: &Grid<A>, b: &Grid<B>, what: &str) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what}: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )))
    }
}

impl Mask {
    pub fn all(width: usize, height: usize) -> Mask {
        Grid::filled(width, height, true)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        }
    }

    /// FNV-1a fingerprint of the mask bits.
    pub fn fingerprint(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for &bit in &self.data {
            hash ^= bit as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }
}

/// Per-pixel depth in scene units with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T = f64> {
    pub(crate) values: Grid<T>,
    pub(crate) mask: Mask,
}

impl DepthMap<f64> {
    /// Fully valid depth map; every value must be finite and strictly positive.
    pub fn new(values: Grid<f64>) -> Result<Self> {
        let mask = Mask::all(values.width(), values.height());
        Self::with_mask(values, mask)
    }

    /// Values must be finite everywhere and strictly positive where `mask` is set.
    pub fn with_mask(values: Grid<f64>, mask: Mask) -> Result<Self> {
        check_shape(&values, &mask, "depth mask")?;
        for (&d, &valid) in values.as_slice().iter().zip(mask.as_slice()) {
            if !d.is_finite() || (valid && d <= 0.0) {
                return Err(Error::InvalidDepth { depth: d });
            }
        }
        Ok(DepthMap { values, mask })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(Grid::filled(width, height, depth))
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::with_mask(self.values.map(|d| d * s), self.mask.clone())
    }
}

impl<T> DepthMap<T> {
    pub(crate) fn from_parts(values: Grid<T>, mask: Mask) -> Self {
        DepthMap { values, mask }
    }

    pub fn values(&self) -> &Grid<T> {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }
}

/// H×W grid of pixel displacements `(du, dv)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T = f64> {
    pub(crate) vectors: Grid<[T; 2]>,
    pub(crate) mask: Mask,
}

impl FlowField<f64> {
    pub fn new(vectors: Grid<[f64; 2]>) -> Result<Self> {
        let mask = Mask::all(vectors.width(), vectors.height());
        Self::with_mask(vectors, mask)
    }

    /// Components must be finite where `mask` is set.
    pub fn with_mask(vectors: Grid<[f64; 2]>, mask: Mask) -> Result<Self> {
        check_shape(&vectors, &mask, "flow mask")?;
        for (i, (f, &valid)) in vectors.as_slice().iter().zip(mask.as_slice()).enumerate() {
            if valid && !(f[0].is_finite() && f[1].is_finite()) {
                return Err(Error::InvalidValue(format!("non-finite flow at element {i}")));
            }
        }
        Ok(FlowField { vectors, mask })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField { vectors: Grid::filled(width, height, [0.0; 2]), mask: Mask::all(width, height) }
    }

    pub fn scaled(&self, s: f64) -> Self {
        FlowField { vectors: self.vectors.map(|f| [f[0] * s, f[1] * s]), mask: self.mask.clone() }
    }
}

impl<T> FlowField<T> {
    pub(crate) fn from_parts(vectors: Grid<[T; 2]>, mask: Mask) -> Self {
        FlowField { vectors, mask }
    }

    pub fn vectors(&self) -> &Grid<[T; 2]> {
        &self.vectors
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn width(&self) -> usize {
        self.vectors.width()
    }

    pub fn height(&self) -> usize {
        self.vectors.height()
    }
}

/// Scalar per-pixel quantity (divergence, SSIM map, ...) with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T = f64> {
    pub(crate) values: Grid<T>,
    pub(crate) mask: Mask,
}

impl<T> ScalarField<T> {
    pub fn new(values: Grid<T>, mask: Mask) -> Result<Self> {
        check_shape(&values, &mask, "scalar field mask")?;
        Ok(ScalarField { values, mask })
    }

    pub fn values(&self) -> &Grid<T> {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }
}

/// Interleaved 1- or 3-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T = f64> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl Image<f64> {
    /// Intensities must lie in `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(bad) = data.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidValue(format!("image intensity {bad} outside [0, 1]")));
        }
        Self::from_raw(width, height, channels, data)
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for v in 0..height {
            for u in 0..width {
                for c in 0..channels {
                    data.push(f(u, v, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }
}

impl<T: Copy> Image<T> {
    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!("{channels} channels (expected 1 or 3)")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize, c: usize) -> T {
        self.data[(v * self.width + u) * self.channels + c]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn same_shape<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same<U>(&self, other: &Image<U>, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }
}

impl<T: Real> Image<T> {
    pub(crate) fn lift(image: &Image<f64>) -> Image<T> {
        Image {
            width: image.width,
            height: image.height,
            channels: image.channels,
            data: image.data.iter().map(|&x| T::constant(x)).collect(),
        }
    }
}

impl<T: Real> Grid<[T; 2]> {
    pub(crate) fn lift2(grid: &Grid<[f64; 2]>) -> Grid<[T; 2]> {
        grid.map(|f| [T::constant(f[0]), T::constant(f[1])])
    }
}
