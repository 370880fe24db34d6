//! Per-channel 2D discrete Fourier transform and polar decomposition.
//!
//! All grids are stored channel-outermost, then row-major (`c`, `y`, `x`).
//! The forward transform is unnormalized and the inverse carries the
//! `1/(H·W)` factor. Spectra use natural layout with DC at index `(0, 0)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Height, width and channel count of a spatial or spectral grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    fn check_positive(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Dimension(format!("zero-sized shape {self:?}")));
        }
        Ok(())
    }

    fn check_pow2(&self) -> Result<()> {
        self.check_positive()?;
        if !self.height.is_power_of_two() || !self.width.is_power_of_two() {
            return Err(Error::Dimension(format!(
                "{}x{} is not a power-of-two transform size",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// A real-valued grid with shape metadata (amplitudes, phases, averages).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub shape: Shape,
    pub data: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "grid data length {} does not match {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Index and value of the first negative cell, if any.
    pub fn first_negative(&self) -> Option<(usize, T)> {
        self.data
            .iter()
            .copied()
            .enumerate()
            .find(|(_, v)| *v < T::zero() || v.is_nan())
    }
}

/// Spatial image. Values are nominally in `[0, 1]` but any finite real is accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.check_positive()?;
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} does not match {:?}",
                data.len(),
                shape
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite pixel at index {i}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(c, y, x)]
    }

    /// Multiplies every pixel by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| v * factor).collect(),
        }
    }

    pub fn mse(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let sum: T = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        Ok(sum / T::from_usize_lossy(self.data.len()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// Complex frequency grid in split real/imaginary storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    pub shape: Shape,
    pub re: Vec<T>,
    pub im: Vec<T>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn new(shape: Shape, re: Vec<T>, im: Vec<T>) -> Result<Self> {
        if re.len() != shape.len() || im.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "spectrum buffers ({}, {}) do not match {:?}",
                re.len(),
                im.len(),
                shape
            )));
        }
        Ok(Self { shape, re, im })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            re: vec![T::zero(); shape.len()],
            im: vec![T::zero(); shape.len()],
        }
    }

    /// Largest `|S[u,v] - conj(S[-u,-v])|` over all cells and channels.
    pub fn conjugate_symmetry_error(&self) -> T {
        let Shape {
            height: h,
            width: w,
            channels,
        } = self.shape;
        let mut worst = T::zero();
        for c in 0..channels {
            for u in 0..h {
                for v in 0..w {
                    let a = self.shape.index(c, u, v);
                    let b = self.shape.index(c, (h - u) % h, (w - v) % w);
                    let dr = (self.re[a] - self.re[b]).abs();
                    let di = (self.im[a] + self.im[b]).abs();
                    worst = worst.max(dr.max(di));
                }
            }
        }
        worst
    }

    pub fn max_amplitude(&self) -> T {
        self.re
            .iter()
            .zip(&self.im)
            .fold(T::zero(), |m, (&r, &i)| m.max(r.hypot_portable(i)))
    }
}

/// Polar form of a spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpPhase<T> {
    pub amplitude: Grid<T>,
    pub phase: Grid<T>,
}

/// Twiddle factors and bit-reversal table for one power-of-two length.
struct Radix2Plan<T> {
    n: usize,
    cos: Vec<T>,
    sin: Vec<T>,
    bitrev: Vec<usize>,
}

impl<T: Scalar> Radix2Plan<T> {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let half = n / 2;
        let two_pi = T::PI() + T::PI();
        let nf = T::from_usize_lossy(n);
        let (cos, sin) = (0..half)
            .map(|k| {
                let theta = two_pi * T::from_usize_lossy(k) / nf;
                let (s, c) = theta.sin_cos_portable();
                (c, s)
            })
            .unzip();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        Self {
            n,
            cos,
            sin,
            bitrev,
        }
    }

    /// In-place iterative Cooley-Tukey. `inverse` flips the exponent sign; no scaling.
    fn run(&self, re: &mut [T], im: &mut [T], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let wr = self.cos[k * step];
                    let wi = if inverse {
                        self.sin[k * step]
                    } else {
                        -self.sin[k * step]
                    };
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }
}

/// Applies the 1D transform along rows then columns of every channel plane.
fn transform_planes<T: Scalar>(shape: Shape, re: &mut [T], im: &mut [T], inverse: bool) {
    let Shape {
        height: h,
        width: w,
        channels,
    } = shape;
    let row_plan = Radix2Plan::<T>::new(w);
    let col_plan = Radix2Plan::<T>::new(h);
    let mut col_re = vec![T::zero(); h];
    let mut col_im = vec![T::zero(); h];
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..h {
            let s = base + y * w;
            row_plan.run(&mut re[s..s + w], &mut im[s..s + w], inverse);
        }
        for x in 0..w {
            for y in 0..h {
                col_re[y] = re[base + y * w + x];
                col_im[y] = im[base + y * w + x];
            }
            col_plan.run(&mut col_re, &mut col_im, inverse);
            for y in 0..h {
                re[base + y * w + x] = col_re[y];
                im[base + y * w + x] = col_im[y];
            }
        }
    }
}

/// Unnormalized forward 2D DFT of each channel.
pub fn dft2<T: Scalar>(img: &Image<T>) -> Result<Spectrum<T>> {
    img.shape.check_pow2()?;
    if let Some(i) = img.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite pixel at index {i}")));
    }
    let mut re = img.data.clone();
    let mut im = vec![T::zero(); re.len()];
    transform_planes(img.shape, &mut re, &mut im, false);
    Ok(Spectrum {
        shape: img.shape,
        re,
        im,
    })
}

/// Inverse 2D DFT with `1/(H·W)` scaling.
///
/// The imaginary part of the result must be below `1e-6` times the largest
/// spectral amplitude; it is then discarded.
pub fn idft2<T: Scalar>(spec: &Spectrum<T>) -> Result<Image<T>> {
    spec.shape.check_pow2()?;
    if spec.re.len() != spec.shape.len() || spec.im.len() != spec.shape.len() {
        return Err(Error::ShapeMismatch(
            "spectrum buffers do not match shape".into(),
        ));
    }
    let max_amp = spec.max_amplitude();
    let mut re = spec.re.clone();
    let mut im = spec.im.clone();
    transform_planes(spec.shape, &mut re, &mut im, true);
    let scale = T::one() / T::from_usize_lossy(spec.shape.plane());
    let mut residue = T::zero();
    for (r, i) in re.iter_mut().zip(&im) {
        *r *= scale;
        residue = residue.max((*i * scale).abs());
    }
    let rel = T::lit(1e-6).max(T::lit(1e3) * T::epsilon());
    let limit = rel * max_amp;
    if residue > limit || residue.is_nan() {
        return Err(Error::SpectralConsistency {
            residue: residue.to_f64_lossy(),
            limit: limit.to_f64_lossy(),
        });
    }
    if let Some(i) = re.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "inverse transform output index {i}"
        )));
    }
    Ok(Image {
        shape: spec.shape,
        data: re,
    })
}

/// Splits a spectrum into amplitude and quadrant-correct phase.
///
/// Cells that are zero up to rounding (amplitude at most `1000·eps` times the
/// largest amplitude of their channel plane) get phase 0. Their computed
/// angle is noise, and pinning it keeps conjugate partners consistent.
pub fn decompose<T: Scalar>(spec: &Spectrum<T>) -> AmpPhase<T> {
    let amplitude: Vec<T> = spec
        .re
        .iter()
        .zip(&spec.im)
        .map(|(&r, &i)| r.hypot_portable(i))
        .collect();
    let plane = spec.shape.plane();
    let mut phase = vec![T::zero(); amplitude.len()];
    for (c, amps) in amplitude.chunks(plane).enumerate() {
        let peak = amps.iter().fold(T::zero(), |m, &a| m.max(a));
        let cutoff = peak * T::lit(1e3) * T::epsilon();
        for (j, &a) in amps.iter().enumerate() {
            let k = c * plane + j;
            if a > cutoff {
                phase[k] = normalize_angle(spec.im[k].atan2_portable(spec.re[k]));
            }
        }
    }
    AmpPhase {
        amplitude: Grid {
            shape: spec.shape,
            data: amplitude,
        },
        phase: Grid {
            shape: spec.shape,
            data: phase,
        },
    }
}

/// atan2 returns `[-π, π]`; fold `-π` onto `π` so the range is `(-π, π]`.
#[inline]
fn normalize_angle<T: Scalar>(a: T) -> T {
    if a <= -T::PI() {
        T::PI()
    } else {
        a
    }
}

/// Builds a spectrum from amplitude and phase grids.
pub fn recompose<T: Scalar>(amp: &Grid<T>, phase: &Grid<T>) -> Result<Spectrum<T>> {
    if amp.shape != phase.shape || amp.data.len() != phase.data.len() {
        return Err(Error::ShapeMismatch(format!(
            "amplitude {:?} vs phase {:?}",
            amp.shape, phase.shape
        )));
    }
    if let Some((index, v)) = amp.first_negative() {
        return Err(Error::NegativeAmplitude {
            index,
            value: v.to_f64_lossy(),
        });
    }
    let (re, im) = amp
        .data
        .iter()
        .zip(&phase.data)
        .map(|(&a, &p)| {
            let (s, c) = p.sin_cos_portable();
            (a * c, a * s)
        })
        .unzip();
    Ok(Spectrum {
        shape: amp.shape,
        re,
        im,
    })
}

/// Forward transform followed by polar decomposition.
pub fn amp_phase<T: Scalar>(img: &Image<T>) -> Result<AmpPhase<T>> {
    Ok(decompose(&dft2(img)?))
}
