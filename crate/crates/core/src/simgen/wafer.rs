//! Wafer-shape to overlay-error surrogate.
//!
//! Lengths are in mm. Each wafer is a bow plus nanotopography waves:
//! `w(x, y) = b(0.5x² + y²)/R² + Σ h/2 (1 + sin(2πx/λ)) + Σ h/2 (1 + cos(2πy/λ))`.
//! The first-layer shape is a fixed bow. The in-plane distortion along an
//! axis is the negative shape slope, taken by finite differences on a
//! Cartesian grid. The change in distortion between the two layers is
//! corrected by a least-squares quadratic surface over the disc, and the
//! residual is the response. Response and shape difference are resampled
//! bilinearly onto a polar grid.
//!
//! Every shape is a sum of a function of `x` and a function of `y`, so the
//! Cartesian fields are stored as two profiles and never materialized.

use std::f64::consts::PI;

use nalgebra::{Matrix6, Vector6};
use rand::Rng;

use super::{noisy, sample_stream, split_sizes, Axis, SimData, SimSpec};
use crate::error::{Error, Result};
use crate::solver::Dataset;
use crate::tensor::Tensor;

pub const RADIUS: f64 = 150.0;
/// Bow of the first-layer shape (100 µm).
pub const FIRST_BOW: f64 = 0.1;
pub const BOW_RANGE: (f64, f64) = (0.03, 0.1);
pub const WAVE_COUNT: (usize, usize) = (2, 10);
pub const WAVELENGTH_RANGE: (f64, f64) = (2.0, 20.0);

/// One nanotopography component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wave {
    pub height: f64,
    pub wavelength: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaferShape {
    pub bow: f64,
    pub waves: Vec<Wave>,
}

impl WaferShape {
    pub fn first_layer() -> Self {
        WaferShape {
            bow: FIRST_BOW,
            waves: Vec::new(),
        }
    }

    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let bow = rng.random_range(BOW_RANGE.0..BOW_RANGE.1);
        let p = rng.random_range(WAVE_COUNT.0..=WAVE_COUNT.1);
        let waves = (0..p)
            .map(|_| {
                let wavelength = rng.random_range(WAVELENGTH_RANGE.0..WAVELENGTH_RANGE.1);
                let height = rng.random_range(wavelength / 1e7..wavelength / 1e6);
                Wave { height, wavelength }
            })
            .collect();
        WaferShape { bow, waves }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.x_part(x) + self.y_part(y)
    }

    fn x_part(&self, x: f64) -> f64 {
        let waves: f64 = self
            .waves
            .iter()
            .map(|w| 0.5 * w.height * (1.0 + (2.0 * PI * x / w.wavelength).sin()))
            .sum();
        self.bow * 0.5 * x * x / (RADIUS * RADIUS) + waves
    }

    fn y_part(&self, y: f64) -> f64 {
        let waves: f64 = self
            .waves
            .iter()
            .map(|w| 0.5 * w.height * (1.0 + (2.0 * PI * y / w.wavelength).cos()))
            .sum();
        self.bow * y * y / (RADIUS * RADIUS) + waves
    }
}

/// Derivative of uniformly spaced samples: second-order central differences
/// inside, second-order one-sided differences at both ends.
pub fn gradient(values: &[f64], spacing: f64) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 3 {
        return Err(Error::InvalidConfig("gradient needs at least 3 points".into()));
    }
    let h2 = 2.0 * spacing;
    let mut out = Vec::with_capacity(n);
    out.push((-3.0 * values[0] + 4.0 * values[1] - values[2]) / h2);
    out.extend(values.windows(3).map(|w| (w[2] - w[0]) / h2));
    out.push((3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / h2);
    Ok(out)
}

/// `r_i = R(i + ½)/n_r`, `θ_j = 2πj/n_θ`.
pub fn polar_grid(n_r: usize, n_theta: usize) -> (Vec<f64>, Vec<f64>) {
    let r = (0..n_r).map(|i| RADIUS * (i as f64 + 0.5) / n_r as f64).collect();
    let theta = (0..n_theta).map(|j| 2.0 * PI * j as f64 / n_theta as f64).collect();
    (r, theta)
}

/// Area-weighted mean of a polar image laid out radius-major.
pub fn polar_mean(image: &[f64], n_r: usize, n_theta: usize) -> f64 {
    let (r, _) = polar_grid(n_r, n_theta);
    let mut num = 0.0;
    for (i, ri) in r.iter().enumerate() {
        num += ri * image[i * n_theta..(i + 1) * n_theta].iter().sum::<f64>();
    }
    num / (r.iter().sum::<f64>() * n_theta as f64)
}

/// A field `f(x_a, y_b) = along_x[a] + along_y[b]` on the Cartesian grid.
#[derive(Clone, Debug)]
struct Separable {
    along_x: Vec<f64>,
    along_y: Vec<f64>,
}

impl Separable {
    fn at(&self, a: usize, b: usize) -> f64 {
        self.along_x[a] + self.along_y[b]
    }
}

/// Bilinear stencil of one polar point on the Cartesian grid.
#[derive(Clone, Copy, Debug)]
struct Stencil {
    a: usize,
    b: usize,
    tx: f64,
    ty: f64,
}

/// Everything that is fixed across samples: the Cartesian grid, the
/// correction fit over the disc and the polar stencils.
#[derive(Clone, Debug)]
pub struct WaferPipeline {
    coords: Vec<f64>,
    spacing: f64,
    axis: Axis,
    /// For each grid row `b`, the column range inside the disc.
    disc: Vec<(usize, usize)>,
    gram: nalgebra::Cholesky<f64, nalgebra::U6>,
    stencils: Vec<Stencil>,
    first: WaferShape,
    pub polar: (usize, usize),
}

fn quadratic_terms(x: f64, y: f64) -> Vector6<f64> {
    let (u, v) = (x / RADIUS, y / RADIUS);
    Vector6::new(1.0, u, v, u * u, v * v, u * v)
}

impl WaferPipeline {
    pub fn new(spacing: f64, polar: (usize, usize), axis: Axis) -> Result<Self> {
        let n = (2.0 * RADIUS / spacing).round() as usize + 1;
        if n < 3 || ((n - 1) as f64 * spacing - 2.0 * RADIUS).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "spacing {spacing} must divide the wafer diameter into at least 2 cells"
            )));
        }
        let coords: Vec<f64> = (0..n).map(|i| -RADIUS + i as f64 * spacing).collect();
        let r2 = RADIUS * RADIUS * (1.0 + 1e-12);
        let mut disc = Vec::with_capacity(n);
        let mut gram = Matrix6::zeros();
        for &y in &coords {
            let inside: Vec<usize> = (0..n).filter(|&a| coords[a] * coords[a] + y * y <= r2).collect();
            let range = match (inside.first(), inside.last()) {
                (Some(&lo), Some(&hi)) => (lo, hi + 1),
                _ => (0, 0),
            };
            for &x in &coords[range.0..range.1] {
                let t = quadratic_terms(x, y);
                gram += t * t.transpose();
            }
            disc.push(range);
        }
        let gram = gram
            .cholesky()
            .ok_or_else(|| Error::Numerical("correction Gram matrix is singular".into()))?;
        let (rs, thetas) = polar_grid(polar.0, polar.1);
        let mut stencils = Vec::with_capacity(polar.0 * polar.1);
        for r in &rs {
            for t in &thetas {
                let locate = |c: f64| {
                    let f = (c + RADIUS) / spacing;
                    let i = (f.floor().max(0.0) as usize).min(n - 2);
                    (i, f - i as f64)
                };
                let (a, tx) = locate(r * t.cos());
                let (b, ty) = locate(r * t.sin());
                stencils.push(Stencil { a, b, tx, ty });
            }
        }
        Ok(WaferPipeline {
            coords,
            spacing,
            axis,
            disc,
            gram,
            stencils,
            first: WaferShape::first_layer(),
            polar,
        })
    }

    pub fn from_spec(spec: &SimSpec) -> Result<Self> {
        WaferPipeline::new(spec.wafer_spacing, spec.polar_grid, spec.wafer_axis)
    }

    pub fn grid(&self) -> &[f64] {
        &self.coords
    }

    fn shape_difference(&self, second: &WaferShape) -> Separable {
        let diff = |f: &dyn Fn(&WaferShape, f64) -> f64| -> Vec<f64> {
            self.coords.iter().map(|&c| f(second, c) - f(&self.first, c)).collect()
        };
        Separable {
            along_x: diff(&|s, c| s.x_part(c)),
            along_y: diff(&|s, c| s.y_part(c)),
        }
    }

    /// Change in in-plane distortion between the layers, `−∂(w₂ − w₁)`.
    fn distortion_change(&self, w: &Separable) -> Result<Separable> {
        let n = self.coords.len();
        let neg_grad =
            |v: &[f64]| -> Result<Vec<f64>> { Ok(gradient(v, self.spacing)?.into_iter().map(|g| -g).collect()) };
        Ok(match self.axis {
            Axis::X => Separable {
                along_x: neg_grad(&w.along_x)?,
                along_y: vec![0.0; n],
            },
            Axis::Y => Separable {
                along_x: vec![0.0; n],
                along_y: neg_grad(&w.along_y)?,
            },
        })
    }

    /// Least-squares quadratic fit of `field` over the disc points.
    fn correction(&self, field: &Separable) -> Vector6<f64> {
        let mut rhs = Vector6::zeros();
        for (b, &(lo, hi)) in self.disc.iter().enumerate() {
            let y = self.coords[b];
            for a in lo..hi {
                rhs += quadratic_terms(self.coords[a], y) * field.at(a, b);
            }
        }
        self.gram.solve(&rhs)
    }

    /// Corrected distortion at Cartesian node `(a, b)`.
    fn residual_at(&self, field: &Separable, k: &Vector6<f64>, a: usize, b: usize) -> f64 {
        field.at(a, b) - quadratic_terms(self.coords[a], self.coords[b]).dot(k)
    }

    /// Corrected distortion on the full Cartesian grid, row `b` (y) major.
    pub fn residual_field(&self, second: &WaferShape) -> Result<Vec<f64>> {
        let d = self.distortion_change(&self.shape_difference(second))?;
        let k = self.correction(&d);
        let n = self.coords.len();
        let mut out = Vec::with_capacity(n * n);
        for b in 0..n {
            out.extend((0..n).map(|a| self.residual_at(&d, &k, a, b)));
        }
        Ok(out)
    }

    fn resample(&self, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        self.stencils
            .iter()
            .map(|s| {
                let lo = (1.0 - s.tx) * f(s.a, s.b) + s.tx * f(s.a + 1, s.b);
                let hi = (1.0 - s.tx) * f(s.a, s.b + 1) + s.tx * f(s.a + 1, s.b + 1);
                (1.0 - s.ty) * lo + s.ty * hi
            })
            .collect()
    }

    /// Polar images of the shape difference and the corrected distortion.
    pub fn sample(&self, second: &WaferShape) -> Result<(Vec<f64>, Vec<f64>)> {
        let w = self.shape_difference(second);
        let d = self.distortion_change(&w)?;
        let k = self.correction(&d);
        let predictor = self.resample(|a, b| w.at(a, b));
        let response = self.resample(|a, b| self.residual_at(&d, &k, a, b));
        Ok((predictor, response))
    }

    /// Polar image of an arbitrary shape, for consistency checks.
    pub fn resample_shape(&self, shape: &WaferShape) -> Vec<f64> {
        self.resample(|a, b| shape.height(self.coords[a], self.coords[b]))
    }
}

pub fn generate(spec: &SimSpec) -> Result<SimData> {
    let pipeline = WaferPipeline::from_spec(spec)?;
    let (n_r, n_t) = spec.polar_grid;
    let mut parts = Vec::new();
    for (split, m) in split_sizes(spec) {
        if m == 0 {
            parts.push(None);
            continue;
        }
        let mut x = Vec::with_capacity(m * n_r * n_t);
        let mut y = Vec::with_capacity(m * n_r * n_t);
        for i in 0..m {
            let shape = WaferShape::random(&mut sample_stream(spec, split, i));
            let (xi, yi) = pipeline.sample(&shape)?;
            x.extend(xi);
            y.extend(yi);
        }
        let clean = Tensor::new(vec![m, n_r, n_t], y)?;
        let y = noisy(spec, split, &clean);
        let x = Tensor::new(vec![m, n_r, n_t], x)?;
        parts.push(Some(Dataset::new(y, vec![x])?));
    }
    let test = parts.pop().expect("two splits");
    let train = parts.pop().flatten().expect("training split is non-empty");
    Ok(SimData {
        train,
        test,
        train_clean: None,
        test_clean: None,
        input_names: vec!["shape_difference".into()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::SimKind;

    #[test]
    fn pure_bow_is_fully_corrected() {
        let p = WaferPipeline::new(2.0, (10, 20), Axis::X).unwrap();
        let bow = WaferShape {
            bow: 0.07,
            waves: Vec::new(),
        };
        let field = p.residual_field(&bow).unwrap();
        assert!(field.iter().all(|v| v.abs() < 1e-8));
        let py = WaferPipeline::new(2.0, (10, 20), Axis::Y).unwrap();
        assert!(py.residual_field(&bow).unwrap().iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn wave_gradient_matches_analytic_slope() {
        let (h, lambda) = (1e-5, 7.0);
        for spacing in [0.5, 0.25] {
            let xs: Vec<f64> = (0..=(300.0 / spacing) as usize)
                .map(|i| -150.0 + i as f64 * spacing)
                .collect();
            let w: Vec<f64> = xs
                .iter()
                .map(|x| 0.5 * h * (1.0 + (2.0 * PI * x / lambda).sin()))
                .collect();
            let g = gradient(&w, spacing).unwrap();
            let k = 2.0 * PI / lambda;
            // central-difference error is h k³ s² / 12 at most
            let bound = 0.5 * h * k.powi(3) * spacing * spacing / 6.0 * 1.01;
            for (x, gi) in xs.iter().zip(&g).skip(1).take(xs.len() - 2) {
                let exact = 0.5 * h * k * (k * x).cos();
                assert!((gi - exact).abs() <= bound, "{x}: {gi} vs {exact}");
            }
        }
    }

    #[test]
    fn gradient_is_exact_for_quadratics() {
        let v: Vec<f64> = (0..6).map(|i| (i * i) as f64).collect();
        let g = gradient(&v, 1.0).unwrap();
        for (i, gi) in g.iter().enumerate() {
            assert!((gi - 2.0 * i as f64).abs() < 1e-12);
        }
        assert!(gradient(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn polar_mean_of_first_layer() {
        let p = WaferPipeline::new(0.5, (50, 100), Axis::X).unwrap();
        let img = p.resample_shape(&WaferShape::first_layer());
        let mean = polar_mean(&img, 50, 100);
        let disc_mean = 0.375 * FIRST_BOW;
        assert!((mean - disc_mean).abs() < 0.02 * disc_mean, "{mean}");
    }

    #[test]
    fn generated_shapes() {
        let spec = SimSpec {
            n_train: 3,
            n_test: 2,
            polar_grid: (8, 16),
            wafer_spacing: 1.0,
            ..SimSpec::new(SimKind::Wafer)
        };
        let data = generate(&spec).unwrap();
        assert_eq!(data.train.y.shape(), &[3, 8, 16]);
        assert_eq!(data.train.xs[0].shape(), &[3, 8, 16]);
        assert_eq!(data.test.unwrap().samples(), 2);
        assert!(data.train.y.frobenius_norm() > 0.0);
    }

    #[test]
    fn random_shapes_respect_ranges() {
        let mut rng = crate::rng::stream(3, &[1]);
        for _ in 0..200 {
            let s = WaferShape::random(&mut rng);
            assert!((BOW_RANGE.0..BOW_RANGE.1).contains(&s.bow));
            assert!((2..=10).contains(&s.waves.len()));
            for w in &s.waves {
                assert!(w.height >= w.wavelength / 1e7 && w.height < w.wavelength / 1e6);
            }
        }
    }
}
