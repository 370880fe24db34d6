//! Amplitude normalization.
//!
//! Each client tracks a moving average of its images' amplitude spectra.
//! Images are harmonized by keeping their own phase and swapping in the
//! shared amplitude. The server averages client amplitudes into a global
//! grid that is eventually frozen.

use crate::error::{Error, Result};
use crate::fourier::{self, AmpPhase, Grid, Image, Shape};
use crate::scalar::Scalar;

/// Per-client moving-average amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeState<T> {
    avg: Grid<T>,
    decay: T,
    batches_seen: usize,
}

impl<T: Scalar> AmplitudeState<T> {
    pub fn new(shape: Shape, decay: T) -> Result<Self> {
        if !(decay >= T::zero() && decay <= T::one()) {
            return Err(Error::Config(format!("decay {decay} outside [0, 1]")));
        }
        Ok(Self {
            avg: Grid::zeros(shape),
            decay,
            batches_seen: 0,
        })
    }

    pub fn avg(&self) -> &Grid<T> {
        &self.avg
    }

    pub fn decay(&self) -> T {
        self.decay
    }

    pub fn batches_seen(&self) -> usize {
        self.batches_seen
    }

    /// Replaces the running average with a downloaded grid, keeping the batch count.
    ///
    /// A state that has not seen any batch stays at zero.
    pub fn overwrite_avg(&mut self, avg: &Grid<T>) -> Result<()> {
        if avg.shape != self.avg.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                avg.shape, self.avg.shape
            )));
        }
        if self.batches_seen > 0 {
            self.avg.data.copy_from_slice(&avg.data);
        }
        Ok(())
    }

    /// Returns the state after folding in one batch of amplitude grids.
    pub fn update_average(&self, batch_amps: &[&Grid<T>]) -> Result<Self> {
        let mut next = self.clone();
        next.update_in_place(batch_amps)?;
        Ok(next)
    }

    /// In-place form of [`update_average`](Self::update_average).
    ///
    /// The first batch initializes the average to the in-batch mean; later
    /// batches blend as `(1 - v) * avg + v * mean`.
    pub fn update_in_place(&mut self, batch_amps: &[&Grid<T>]) -> Result<()> {
        if batch_amps.is_empty() {
            return Err(Error::Empty("amplitude batch"));
        }
        for g in batch_amps {
            if g.shape != self.avg.shape {
                return Err(Error::ShapeMismatch(format!(
                    "batch amplitude {:?} vs state {:?}",
                    g.shape, self.avg.shape
                )));
            }
            if let Some((index, v)) = g.first_negative() {
                return Err(Error::NegativeAmplitude {
                    index,
                    value: v.to_f64_lossy(),
                });
            }
        }
        let inv_m = T::one() / T::from_usize_lossy(batch_amps.len());
        let mut mean = vec![T::zero(); self.avg.data.len()];
        for g in batch_amps {
            for (m, &a) in mean.iter_mut().zip(&g.data) {
                *m += a;
            }
        }
        if self.batches_seen == 0 {
            for (dst, m) in self.avg.data.iter_mut().zip(mean) {
                *dst = m * inv_m;
            }
        } else {
            let keep = T::one() - self.decay;
            let v = self.decay;
            for (dst, m) in self.avg.data.iter_mut().zip(mean) {
                *dst = keep * *dst + v * (m * inv_m);
            }
        }
        self.batches_seen += 1;
        Ok(())
    }
}

/// Server-side amplitude shared with all clients.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalAmplitude<T> {
    pub avg: Grid<T>,
    pub frozen: bool,
}

/// Harmonizes one image given its precomputed phase.
pub fn normalize_with_phase<T: Scalar>(amplitude: &Grid<T>, phase: &Grid<T>) -> Result<Image<T>> {
    fourier::idft2(&fourier::recompose(amplitude, phase)?)
}

/// Replaces each image's amplitude with `amplitude` while keeping its phase.
pub fn normalize_batch<T: Scalar>(
    amplitude: &Grid<T>,
    batch: &[Image<T>],
) -> Result<Vec<Image<T>>> {
    batch
        .iter()
        .map(|img| {
            if img.shape() != amplitude.shape {
                return Err(Error::ShapeMismatch(format!(
                    "image {:?} vs amplitude {:?}",
                    img.shape(),
                    amplitude.shape
                )));
            }
            let AmpPhase { phase, .. } = fourier::amp_phase(img)?;
            normalize_with_phase(amplitude, &phase)
        })
        .collect()
}

/// Unweighted mean of the clients' running averages.
pub fn aggregate_amplitudes<T: Scalar>(
    states: &[&AmplitudeState<T>],
) -> Result<GlobalAmplitude<T>> {
    let first = states
        .first()
        .ok_or(Error::Empty("client amplitude list"))?;
    let shape = first.avg.shape;
    let mut acc = vec![T::zero(); shape.len()];
    for s in states {
        if s.avg.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                s.avg.shape, shape
            )));
        }
        for (a, &v) in acc.iter_mut().zip(&s.avg.data) {
            *a += v;
        }
    }
    let n = T::from_usize_lossy(states.len());
    for a in &mut acc {
        *a /= n;
    }
    Ok(GlobalAmplitude {
        avg: Grid { shape, data: acc },
        frozen: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> Shape {
        Shape::new(4, 4, 2)
    }

    fn lcg_image(seed: u64) -> Image<f64> {
        let mut s = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let data = (0..shape().len())
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        Image::new(shape(), data).unwrap()
    }

    #[test]
    fn first_batch_bootstraps_to_mean() {
        let a = Grid::from_vec(shape(), (0..32).map(|v| v as f64).collect()).unwrap();
        let st = AmplitudeState::new(shape(), 0.1)
            .unwrap()
            .update_average(&[&a])
            .unwrap();
        assert_eq!(st.avg(), &a);
        assert_eq!(st.batches_seen(), 1);
    }

    #[test]
    fn zero_decay_freezes_average() {
        let a = Grid::filled(shape(), 2.0);
        let b = Grid::filled(shape(), 9.0);
        let st = AmplitudeState::new(shape(), 0.0)
            .unwrap()
            .update_average(&[&a])
            .unwrap();
        let st2 = st.update_average(&[&b]).unwrap();
        assert_eq!(st2.avg(), &a);
    }

    #[test]
    fn decay_blend_on_constant_grids() {
        let two = Grid::filled(shape(), 2.0);
        let st = AmplitudeState::new(shape(), 0.1)
            .unwrap()
            .update_average(&[&two])
            .unwrap();
        // batch mean of 10 and 14 is 12
        let ten = Grid::filled(shape(), 10.0);
        let fourteen = Grid::filled(shape(), 14.0);
        let st = st.update_average(&[&ten, &fourteen]).unwrap();
        assert!(st.avg().data.iter().all(|v: &f64| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn constant_feed_converges_geometrically() {
        let v = 0.25;
        let m = Grid::filled(shape(), 5.0);
        let mut st = AmplitudeState::new(shape(), v).unwrap();
        st.update_in_place(&[&Grid::filled(shape(), 1.0)]).unwrap();
        let mut prev = 4.0;
        for _ in 0..40 {
            st.update_in_place(&[&m]).unwrap();
            let err = st
                .avg()
                .data
                .iter()
                .map(|a| (a - 5.0f64).abs())
                .fold(0.0, f64::max);
            assert!((err - prev * (1.0 - v)).abs() < 1e-12);
            prev = err;
        }
    }

    #[test]
    fn update_errors() {
        let st = AmplitudeState::<f64>::new(shape(), 0.1).unwrap();
        assert!(matches!(st.update_average(&[]), Err(Error::Empty(_))));
        let wrong = Grid::zeros(Shape::new(2, 2, 1));
        assert!(matches!(
            st.update_average(&[&wrong]),
            Err(Error::ShapeMismatch(_))
        ));
        let mut neg = Grid::zeros(shape());
        neg.data[3] = -1.0;
        assert!(matches!(
            st.update_average(&[&neg]),
            Err(Error::NegativeAmplitude { index: 3, .. })
        ));
        assert!(AmplitudeState::<f64>::new(shape(), 1.5).is_err());
    }

    #[test]
    fn self_normalization_is_identity() {
        let x = lcg_image(3);
        let amp = fourier::amp_phase(&x).unwrap().amplitude;
        let out = normalize_batch(&amp, std::slice::from_ref(&x)).unwrap();
        assert!(out[0].max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn same_phase_different_amplitude_collapse() {
        let x = lcg_image(5);
        let y = x.scaled(3.5);
        let shared = fourier::amp_phase(&lcg_image(8)).unwrap().amplitude;
        let out = normalize_batch(&shared, &[x, y]).unwrap();
        assert!(out[0].max_abs_diff(&out[1]) < 1e-9);
    }

    #[test]
    fn scaled_image_recovered_with_unscaled_amplitude() {
        let x = lcg_image(11);
        let amp = fourier::amp_phase(&x).unwrap().amplitude;
        let out = normalize_batch(&amp, &[x.scaled(2.5)]).unwrap();
        assert!(out[0].max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn normalize_rejects_shape_mismatch() {
        let amp = Grid::zeros(Shape::new(2, 2, 1));
        assert!(matches!(
            normalize_batch(&amp, &[lcg_image(1)]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn aggregate_means() {
        let mk = |v: f64| {
            let mut s = AmplitudeState::new(shape(), 0.1).unwrap();
            s.update_in_place(&[&Grid::filled(shape(), v)]).unwrap();
            s
        };
        let (a, b) = (mk(1.0), mk(3.0));
        let g = aggregate_amplitudes(&[&a, &b]).unwrap();
        assert!(g.avg.data.iter().all(|v| *v == 2.0));
        assert!(!g.frozen);
        let same = aggregate_amplitudes(&[&a, &a, &a]).unwrap();
        assert_eq!(&same.avg, a.avg());
        assert!(matches!(
            aggregate_amplitudes::<f64>(&[]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn aggregate_random_grids_matches_direct_sum() {
        let states: Vec<_> = (0..3)
            .map(|k| {
                let amp = fourier::amp_phase(&lcg_image(20 + k)).unwrap().amplitude;
                let mut s = AmplitudeState::new(shape(), 0.1).unwrap();
                s.update_in_place(&[&amp]).unwrap();
                s
            })
            .collect();
        let refs: Vec<_> = states.iter().collect();
        let g = aggregate_amplitudes(&refs).unwrap();
        for i in 0..shape().len() {
            let mut total = 0.0;
            for s in &states {
                total += s.avg().data[i];
            }
            assert!((g.avg.data[i] - total / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn overwrite_respects_unseen_state() {
        let mut st = AmplitudeState::<f64>::new(shape(), 0.1).unwrap();
        st.overwrite_avg(&Grid::filled(shape(), 4.0)).unwrap();
        assert!(st.avg().is_zero());
        st.update_in_place(&[&Grid::filled(shape(), 1.0)]).unwrap();
        st.overwrite_avg(&Grid::filled(shape(), 4.0)).unwrap();
        assert!(st.avg().data.iter().all(|v| *v == 4.0));
    }
}
