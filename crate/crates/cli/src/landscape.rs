//! 2D loss surfaces around a trained model.

use std::io::Write;

use harmofl::model::{self, MlpArch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};

/// Upper limit on loss evaluations for one export.
pub const MAX_EVALUATIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub a: f64,
    pub b: f64,
    pub loss: f64,
}

/// `grid` evenly spaced coordinates over `[-span, span]`; a single point sits at 0.
pub fn coordinates(grid: usize, span: f64) -> Vec<f64> {
    if grid == 1 {
        return vec![0.0];
    }
    (0..grid)
        .map(|i| -span + 2.0 * span * i as f64 / (grid - 1) as f64)
        .collect()
}

/// Evaluates `f(center + a·d1 + b·d2)` on a `grid x grid` lattice, row-major in `a`.
pub fn loss_grid<F>(
    center: &[f64],
    d1: &[f64],
    d2: &[f64],
    grid: usize,
    span: f64,
    f: F,
) -> CliResult<Vec<GridPoint>>
where
    F: Fn(&[f64]) -> CliResult<f64> + Sync,
{
    if grid == 0 {
        return Err(CliError::Config("grid must be at least 1".into()));
    }
    if !(span >= 0.0 && span.is_finite()) {
        return Err(CliError::Config(format!(
            "span must be finite and nonnegative, got {span}"
        )));
    }
    if d1.len() != center.len() || d2.len() != center.len() {
        return Err(CliError::Config(
            "direction length differs from the model".into(),
        ));
    }
    let coords = coordinates(grid, span);
    let points: Vec<(f64, f64)> = coords
        .iter()
        .flat_map(|&a| coords.iter().map(move |&b| (a, b)))
        .collect();
    points
        .par_iter()
        .map(|&(a, b)| {
            let x: Vec<f64> = center
                .iter()
                .zip(d1)
                .zip(d2)
                .map(|((c, u), v)| c + a * u + b * v)
                .collect();
            Ok(GridPoint { a, b, loss: f(&x)? })
        })
        .collect()
}

/// Rescales each weight row of `dir` to the norm of the matching row of
/// `params` and zeroes the bias entries.
pub fn filter_normalize(arch: &MlpArch, params: &[f64], dir: &mut [f64]) {
    for layer in arch.layers() {
        let w = layer.weight_range();
        for o in 0..layer.fan_out {
            let row = w.start + o * layer.fan_in..w.start + (o + 1) * layer.fan_in;
            let target = model::slice_norm2(&params[row.clone()]);
            let have = model::slice_norm2(&dir[row.clone()]);
            let scale = if have > 0.0 { target / have } else { 0.0 };
            for d in &mut dir[row] {
                *d *= scale;
            }
        }
        for d in &mut dir[layer.bias_range()] {
            *d = 0.0;
        }
    }
}

/// Two filter-normalized Gaussian directions; the second is made orthogonal
/// to the first and rescaled to the same overall norm.
pub fn directions(arch: &MlpArch, params: &[f64], seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<f64> {
        let mut d: Vec<f64> = (0..params.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        filter_normalize(arch, params, &mut d);
        d
    };
    let d1 = draw();
    let mut d2 = draw();
    let n1 = model::slice_norm2(&d1);
    if n1 > 0.0 {
        let proj = d1.iter().zip(&d2).map(|(x, y)| x * y).sum::<f64>() / (n1 * n1);
        for (y, x) in d2.iter_mut().zip(&d1) {
            *y -= proj * x;
        }
        let n2 = model::slice_norm2(&d2);
        if n2 > 0.0 {
            for y in &mut d2 {
                *y *= n1 / n2;
            }
        }
    }
    (d1, d2)
}

pub fn write_csv<W: Write>(w: W, points: &[GridPoint]) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["a", "b", "loss"])?;
    for p in points {
        out.write_record([p.a.to_string(), p.b.to_string(), p.loss.to_string()])?;
    }
    out.flush()
}
