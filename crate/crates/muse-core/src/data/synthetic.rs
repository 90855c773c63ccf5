//! Synthetic data with known structure: correlated Gaussian pairs for
//! validating the information estimator, and a procedural 10-class glyph
//! set for desk-scale training runs.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

/// Jointly Gaussian coordinate pairs with correlation `rho`; the analytic
/// mutual information is known in closed form.
#[derive(Debug, Clone, Copy)]
pub struct GaussianPairSpec {
    pub rho: f64,
    pub dim: usize,
}

impl GaussianPairSpec {
    pub fn new(rho: f64, dim: usize) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::arg(
                "gaussian_pair",
                format!("|rho| must be below 1, got {rho}"),
            ));
        }
        if dim == 0 {
            return Err(Error::arg("gaussian_pair", "dim must be positive"));
        }
        Ok(GaussianPairSpec { rho, dim })
    }

    /// -(dim/2) * ln(1 - rho^2) nats.
    pub fn analytic_mi_nats(&self) -> f64 {
        -(self.dim as f64 / 2.0) * (1.0 - self.rho * self.rho).ln()
    }
}

/// Draw `n` pairs; each coordinate of Y is `rho*x + sqrt(1-rho^2)*z` with
/// independent standard normals, giving per-coordinate correlation `rho`.
pub fn corr_gaussian_batch<E: Elem>(
    spec: &GaussianPairSpec,
    n: usize,
    rng: &mut SeedRng,
) -> (Tensor<E>, Tensor<E>) {
    let mut xs = vec![E::ZERO; n * spec.dim];
    let mut ys = vec![E::ZERO; n * spec.dim];
    let noise = (1.0 - spec.rho * spec.rho).sqrt();
    for i in 0..n * spec.dim {
        let x = rng.normal();
        let z = rng.normal();
        xs[i] = E::from_f64(x);
        ys[i] = E::from_f64(spec.rho * x + noise * z);
    }
    (
        Tensor::new(xs, &[n, spec.dim]).expect("shape matches"),
        Tensor::new(ys, &[n, spec.dim]).expect("shape matches"),
    )
}

/// Procedurally drawn 28x28 glyphs in ten visually distinct classes, with
/// jitter, intensity variation, and speckle noise. Labels cycle 0..9.
pub struct SynthGlyphs {
    pub side: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

const SIDE: usize = 28;

struct Canvas {
    px: [f32; SIDE * SIDE],
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            px: [0.0; SIDE * SIDE],
        }
    }

    fn dot(&mut self, y: f32, x: f32, v: f32) {
        let (yi, xi) = (y.round() as isize, x.round() as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (py, px) = (yi + dy, xi + dx);
                if py < 0 || px < 0 || py >= SIDE as isize || px >= SIDE as isize {
                    continue;
                }
                let fall = if dy == 0 && dx == 0 { 1.0 } else { 0.45 };
                let i = py as usize * SIDE + px as usize;
                self.px[i] = self.px[i].max(v * fall);
            }
        }
    }

    fn line(&mut self, y0: f32, x0: f32, y1: f32, x1: f32, v: f32) {
        let steps = ((y1 - y0).abs().max((x1 - x0).abs()) * 2.0).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f32 / steps as f32;
            self.dot(y0 + (y1 - y0) * t, x0 + (x1 - x0) * t, v);
        }
    }

    fn circle(&mut self, cy: f32, cx: f32, r: f32, v: f32) {
        let steps = (r * 8.0).ceil() as usize;
        for s in 0..steps {
            let a = s as f32 / steps as f32 * std::f32::consts::TAU;
            self.dot(cy + r * a.sin(), cx + r * a.cos(), v);
        }
    }
}

fn draw_class(c: &mut Canvas, class: usize, v: f32) {
    let m = SIDE as f32 / 2.0 - 0.5; // center
    match class {
        0 => c.circle(m, m, 8.0, v),
        1 => c.line(5.0, m, 22.0, m, v),
        2 => {
            c.line(6.0, 6.0, 6.0, 21.0, v);
            c.line(6.0, 21.0, 21.0, 6.0, v);
            c.line(21.0, 6.0, 21.0, 21.0, v);
        }
        3 => {
            c.line(6.0, 6.0, 6.0, 21.0, v);
            c.line(6.0, 21.0, 21.0, 21.0, v);
            c.line(21.0, 21.0, 21.0, 6.0, v);
            c.line(13.5, 10.0, 13.5, 21.0, v);
        }
        4 => {
            c.line(5.0, 9.0, 22.0, 9.0, v);
            c.line(5.0, 18.0, 22.0, 18.0, v);
            c.line(13.5, 9.0, 13.5, 18.0, v);
        }
        5 => {
            c.line(5.0, 6.0, 5.0, 21.0, v);
            c.line(22.0, 6.0, 22.0, 21.0, v);
        }
        6 => {
            c.line(5.0, 5.0, 22.0, 22.0, v);
            c.line(5.0, 22.0, 22.0, 5.0, v);
        }
        7 => {
            c.line(5.0, 6.0, 22.0, 6.0, v);
            c.line(22.0, 6.0, 22.0, 21.0, v);
        }
        8 => {
            c.circle(9.0, m, 4.5, v);
            c.line(13.0, m, 23.0, m, v);
        }
        _ => {
            c.line(5.0, 6.0, 22.0, 6.0, v);
            c.line(5.0, 21.0, 22.0, 21.0, v);
            c.line(13.5, 6.0, 13.5, 21.0, v);
        }
    }
}

/// Generate `count` glyphs with labels `i % 10`, deterministically from the
/// seed.
pub fn generate_glyphs(count: usize, seed: u64) -> SynthGlyphs {
    let mut rng = SeedRng::derive(seed, 0x676c79706873); // "glyphs"
    let mut images = Vec::with_capacity(count * SIDE * SIDE);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % 10;
        let mut canvas = Canvas::new();
        let intensity = 0.4 + 0.5 * rng.uniform() as f32;
        draw_class(&mut canvas, class, intensity);

        // distractor strokes: short random lines that belong to no class
        for _ in 0..2 {
            let (y0, x0) = (4.0 + 20.0 * rng.uniform() as f32, 4.0 + 20.0 * rng.uniform() as f32);
            let (y1, x1) = (
                (y0 + 10.0 * (rng.uniform() as f32 - 0.5)).clamp(2.0, 25.0),
                (x0 + 10.0 * (rng.uniform() as f32 - 0.5)).clamp(2.0, 25.0),
            );
            canvas.line(y0, x0, y1, x1, 0.3 + 0.4 * rng.uniform() as f32);
        }

        // translation jitter
        let dy = rng.below(11) as isize - 5;
        let dx = rng.below(11) as isize - 5;
        let mut shifted = [0.0f32; SIDE * SIDE];
        for y in 0..SIDE as isize {
            for x in 0..SIDE as isize {
                let (sy, sx) = (y - dy, x - dx);
                if sy >= 0 && sx >= 0 && (sy as usize) < SIDE && (sx as usize) < SIDE {
                    shifted[y as usize * SIDE + x as usize] =
                        canvas.px[sy as usize * SIDE + sx as usize];
                }
            }
        }

        // speckle clutter and pixel noise
        for _ in 0..40 {
            let p = rng.below(SIDE * SIDE);
            shifted[p] = shifted[p].max(0.3 + 0.6 * rng.uniform() as f32);
        }
        for p in shifted.iter_mut() {
            let noisy = *p + 0.28 * rng.normal() as f32;
            *p = noisy.clamp(0.0, 1.0);
        }

        images.extend(shifted.iter().map(|&v| (v * 255.0).round() as u8));
        labels.push(class as u8);
    }
    SynthGlyphs {
        side: SIDE,
        images,
        labels,
    }
}
