//! Synthetic client datasets with amplitude-only feature shift.
//!
//! Every sample is a rectangle (class 0) or ellipse (class 1) rendered in
//! grayscale, replicated over channels, and perturbed with pixel noise. A
//! client's appearance shift is then applied purely in the amplitude
//! spectrum, so the phase of every image is the phase of its clean render.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{self, Grid, Image, Shape};

const BACKGROUND: f64 = 0.2;
const FOREGROUND: f64 = 0.8;
const MAX_ATTEMPTS: u64 = 10;
const SPLIT_STREAM: u64 = 1 << 40;

/// Multiplies the amplitude of every non-DC frequency whose normalized
/// radius lies in `[r_min, r_max)`. Radius is `sqrt((u/H)^2 + (v/W)^2)`
/// with wrapped frequency indices, so it ranges over `[0, 0.7072]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandGain {
    pub r_min: f64,
    pub r_max: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftProfile {
    /// Gain on all non-DC amplitudes.
    #[serde(default = "one")]
    pub contrast_gain: f64,
    /// Mean-intensity offset; the DC amplitude moves by `offset * H * W`.
    #[serde(default)]
    pub brightness_offset: f64,
    #[serde(default)]
    pub band_gains: Vec<BandGain>,
}

fn one() -> f64 {
    1.0
}

impl Default for ShiftProfile {
    fn default() -> Self {
        Self::identity()
    }
}

impl ShiftProfile {
    pub fn identity() -> Self {
        Self {
            contrast_gain: 1.0,
            brightness_offset: 0.0,
            band_gains: Vec::new(),
        }
    }

    pub fn contrast(gain: f64) -> Self {
        Self {
            contrast_gain: gain,
            ..Self::identity()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.contrast_gain > 0.0 && self.contrast_gain.is_finite()) {
            return Err(Error::Config(format!(
                "contrast_gain must be positive, got {}",
                self.contrast_gain
            )));
        }
        if !self.brightness_offset.is_finite() {
            return Err(Error::Config("brightness_offset must be finite".into()));
        }
        for b in &self.band_gains {
            if !(b.gain > 0.0 && b.gain.is_finite()) || !(b.r_min <= b.r_max) {
                return Err(Error::Config(format!("invalid band gain {b:?}")));
            }
        }
        Ok(())
    }

    /// Gain applied to the non-DC cell `(u, v)` of an `h x w` spectrum.
    fn gain_at(&self, u: usize, v: usize, h: usize, w: usize) -> f64 {
        let fu = u.min(h - u) as f64 / h as f64;
        let fv = v.min(w - v) as f64 / w as f64;
        let r = (fu * fu + fv * fv).sqrt();
        self.band_gains
            .iter()
            .filter(|b| r >= b.r_min && r < b.r_max)
            .fold(self.contrast_gain, |g, b| g * b.gain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelRule {
    /// Rectangle is class 0, ellipse is class 1.
    #[default]
    Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_clients: usize,
    pub samples_per_client: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub label_rule: LabelRule,
    /// All clients render the same shapes and noise; only the shift differs.
    #[serde(default)]
    pub paired_content: bool,
    /// One entry per client; an empty list means identity for everyone.
    #[serde(default)]
    pub profiles: Vec<ShiftProfile>,
}

fn default_side() -> usize {
    32
}

fn default_channels() -> usize {
    3
}

impl DatasetSpec {
    /// Four clients, 200 samples each, 32x32x3, noise-free, with contrast,
    /// brightness and band-limited shifts of increasing severity.
    pub fn benchmark() -> Self {
        Self {
            num_clients: 4,
            samples_per_client: 200,
            height: 32,
            width: 32,
            channels: 3,
            noise_std: 0.0,
            label_rule: LabelRule::Shape,
            paired_content: false,
            profiles: benchmark_profiles(),
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.height, self.width, self.channels)
    }

    pub fn profile(&self, client: usize) -> ShiftProfile {
        self.profiles.get(client).cloned().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 || self.samples_per_client == 0 || self.channels == 0 {
            return Err(Error::Config(
                "num_clients, samples_per_client and channels must be positive".into(),
            ));
        }
        if !self.height.is_power_of_two()
            || !self.width.is_power_of_two()
            || self.height < 4
            || self.width < 4
        {
            return Err(Error::Config(format!(
                "image size {}x{} must be powers of two, at least 4",
                self.height, self.width
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        if !self.profiles.is_empty() && self.profiles.len() != self.num_clients {
            return Err(Error::Config(format!(
                "{} shift profiles for {} clients",
                self.profiles.len(),
                self.num_clients
            )));
        }
        for p in &self.profiles {
            p.validate()?;
        }
        Ok(())
    }
}

fn benchmark_profiles() -> Vec<ShiftProfile> {
    vec![
        ShiftProfile::identity(),
        ShiftProfile {
            contrast_gain: 3.0,
            brightness_offset: -0.3,
            band_gains: vec![],
        },
        ShiftProfile {
            contrast_gain: 0.4,
            brightness_offset: 0.5,
            band_gains: vec![BandGain {
                r_min: 0.2,
                r_max: 1.0,
                gain: 4.0,
            }],
        },
        ShiftProfile {
            contrast_gain: 1.0,
            brightness_offset: 0.2,
            band_gains: vec![BandGain {
                r_min: 0.08,
                r_max: 1.0,
                gain: 0.1,
            }],
        },
    ]
}

/// One client's samples with a stratified 80/20 train/eval split.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub images: Vec<Image<f64>>,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl ClientDataset {
    pub fn new(
        images: Vec<Image<f64>>,
        labels: Vec<usize>,
        train: Vec<usize>,
        eval: Vec<usize>,
    ) -> Result<Self> {
        let ds = Self {
            images,
            labels,
            train,
            eval,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks the split is a disjoint cover and all images share one shape.
    pub fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if n == 0 {
            return Err(Error::Empty("client dataset"));
        }
        if self.labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {n} images",
                self.labels.len()
            )));
        }
        let shape = self.images[0].shape();
        if self.images.iter().any(|im| im.shape() != shape) {
            return Err(Error::ShapeMismatch(
                "images of different shapes in one client".into(),
            ));
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.eval) {
            if i >= n || seen[i] {
                return Err(Error::Input(format!(
                    "split index {i} out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Input(
                "train/eval split does not cover every sample".into(),
            ));
        }
        if self.train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        self.images[0].shape()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Mean amplitude spectrum over every image of the client.
    pub fn mean_amplitude(&self) -> Result<Grid<f64>> {
        let shape = self.shape();
        let mut acc = Grid::zeros(shape);
        for img in &self.images {
            let amp = fourier::amp_phase(img)?.amplitude;
            for (a, v) in acc.data.iter_mut().zip(amp.data) {
                *a += v;
            }
        }
        let n = self.images.len() as f64;
        acc.data.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }
}

/// Label and noise-free content parameters of one sample.
#[derive(Debug, Clone, Copy)]
struct Content {
    label: usize,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

fn draw_content(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Content {
    let label = usize::from(rng.random_bool(0.5));
    let (hf, wf) = (h as f64, w as f64);
    Content {
        label,
        cy: rng.random_range(0.45..0.55) * hf,
        cx: rng.random_range(0.45..0.55) * wf,
        ry: rng.random_range(0.25..0.4) * hf,
        rx: rng.random_range(0.25..0.4) * wf,
    }
}

fn inside(c: &Content, y: f64, x: f64) -> bool {
    let dy = (y - c.cy) / c.ry;
    let dx = (x - c.cx) / c.rx;
    match c.label {
        0 => dy.abs() <= 1.0 && dx.abs() <= 1.0,
        _ => dy * dy + dx * dx <= 1.0,
    }
}

/// Renders one clean sample: shape mask, replicated channels, additive noise.
fn render(
    c: &Content,
    shape: Shape,
    noise: Option<&Normal<f64>>,
    rng: &mut ChaCha8Rng,
) -> Image<f64> {
    let mut data = vec![0.0; shape.len()];
    for y in 0..shape.height {
        for x in 0..shape.width {
            let v = if inside(c, y as f64 + 0.5, x as f64 + 0.5) {
                FOREGROUND
            } else {
                BACKGROUND
            };
            for ch in 0..shape.channels {
                data[shape.index(ch, y, x)] = v;
            }
        }
    }
    if let Some(n) = noise {
        for v in &mut data {
            *v += n.sample(rng);
        }
    }
    Image::new(shape, data).expect("rendered pixels are finite")
}

/// Applies a shift profile to the amplitude spectrum of `img`, leaving phase untouched.
pub fn apply_shift(img: &Image<f64>, profile: &ShiftProfile) -> Result<Image<f64>> {
    let shape = img.shape();
    let mut ap = fourier::amp_phase(img)?;
    let (h, w) = (shape.height, shape.width);
    let dc_offset = profile.brightness_offset * (h * w) as f64;
    for c in 0..shape.channels {
        for u in 0..h {
            for v in 0..w {
                let i = shape.index(c, u, v);
                let a = &mut ap.amplitude.data[i];
                if u == 0 && v == 0 {
                    *a = (*a + dc_offset).max(0.0);
                } else {
                    *a *= profile.gain_at(u, v, h, w);
                }
            }
        }
    }
    fourier::idft2(&fourier::recompose(&ap.amplitude, &ap.phase)?)
}

fn stratified_split(labels: &[usize], rng: &mut ChaCha8Rng) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for class in 0..2 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return None;
        }
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_eval = ((idx.len() as f64 * 0.2).round() as usize).clamp(1, idx.len() - 1);
        eval.extend_from_slice(&idx[..n_eval]);
        train.extend_from_slice(&idx[n_eval..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    Some((train, eval))
}

fn client_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn generate_attempt(spec: &DatasetSpec, seed: u64) -> Result<Option<Vec<ClientDataset>>> {
    let shape = spec.shape();
    let noise = (spec.noise_std > 0.0)
        .then(|| Normal::new(0.0, spec.noise_std).expect("validated noise_std"));
    let shared_clean: Option<Vec<(usize, Image<f64>)>> = spec.paired_content.then(|| {
        let mut rng = client_rng(seed, 0);
        (0..spec.samples_per_client)
            .map(|_| {
                let c = draw_content(&mut rng, shape.height, shape.width);
                (c.label, render(&c, shape, noise.as_ref(), &mut rng))
            })
            .collect()
    });
    let clients: Vec<Option<ClientDataset>> = (0..spec.num_clients)
        .into_par_iter()
        .map(|client| -> Result<Option<ClientDataset>> {
            let mut rng = client_rng(seed, client as u64 + 1);
            let clean: Vec<(usize, Image<f64>)> = match &shared_clean {
                Some(shared) => shared.clone(),
                None => (0..spec.samples_per_client)
                    .map(|_| {
                        let c = draw_content(&mut rng, shape.height, shape.width);
                        (c.label, render(&c, shape, noise.as_ref(), &mut rng))
                    })
                    .collect(),
            };
            let profile = spec.profile(client);
            let mut images = Vec::with_capacity(clean.len());
            let mut labels = Vec::with_capacity(clean.len());
            for (label, img) in clean {
                images.push(apply_shift(&img, &profile)?);
                labels.push(label);
            }
            let mut split_rng = client_rng(seed, SPLIT_STREAM | (client as u64 + 1));
            Ok(
                stratified_split(&labels, &mut split_rng).map(|(train, eval)| ClientDataset {
                    images,
                    labels,
                    train,
                    eval,
                }),
            )
        })
        .collect::<Result<_>>()?;
    Ok(clients.into_iter().collect())
}

/// Generates all client datasets for `(spec, seed)`.
///
/// If a client ends up without both classes in both splits the whole set is
/// regenerated from a perturbed seed, up to ten attempts.
pub fn generate_clients(spec: &DatasetSpec, seed: u64) -> Result<Vec<ClientDataset>> {
    spec.validate()?;
    for attempt in 0..MAX_ATTEMPTS {
        let s = seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        if let Some(ds) = generate_attempt(spec, s)? {
            return Ok(ds);
        }
    }
    Err(Error::Generation(format!(
        "a class was missing from some client split after {MAX_ATTEMPTS} attempts"
    )))
}

/// Mean pairwise L2 distance between client mean amplitudes, divided by the
/// norm of the grand-mean amplitude.
pub fn heterogeneity_metric(datasets: &[ClientDataset]) -> Result<f64> {
    if datasets.len() < 2 {
        return Err(Error::Input(
            "heterogeneity needs at least two clients".into(),
        ));
    }
    let means: Vec<Grid<f64>> = datasets
        .iter()
        .map(|d| d.mean_amplitude())
        .collect::<Result<_>>()?;
    let shape = means[0].shape;
    if means.iter().any(|m| m.shape != shape) {
        return Err(Error::ShapeMismatch(
            "clients have different image shapes".into(),
        ));
    }
    let mut grand = vec![0.0; shape.len()];
    for m in &means {
        for (g, v) in grand.iter_mut().zip(&m.data) {
            *g += v / means.len() as f64;
        }
    }
    let grand_norm = grand.iter().map(|v| v * v).sum::<f64>().sqrt();
    if grand_norm == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let d: f64 = means[i]
                .data
                .iter()
                .zip(&means[j].data)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += d.sqrt();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64 / grand_norm)
}
