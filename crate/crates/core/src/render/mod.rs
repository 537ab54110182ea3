//! Differentiable planar splatting renderer.
//!
//! Splats are projected by a pure magnification `f / r`, composited front to
//! back in depth order, and compared to a target with the L1 + D-SSIM
//! photometric loss. [`backward`] returns the exact gradient of that loss with
//! respect to every packed parameter.

mod fd;
mod io;
mod loss;

pub use fd::{
    compare_gradients, finite_diff_grad, grad_check, grad_check_case, random_grad_check, saturated_target, BlockCheck,
    FdSteps, GradCheckDraw, GradCheckReport,
};
pub use io::{read_imgf32, write_imgf32, write_ppm};
pub use loss::{photometric_loss, psnr, ssim, LossConfig, PSNR_CAP_DB};

pub(crate) use loss::loss_and_grad;

use crate::error::{Error, Result};
use crate::scene::{BlockKind, BlockVectors, CameraSpec, GradientSet, Splat, SplatScene};

/// Culling radius, as a squared Mahalanobis distance (3 sigma).
pub const CULL_Q: f64 = 9.0;
/// Squared Mahalanobis distance where the footprint taper begins (2 sigma).
pub const TAPER_Q: f64 = 4.0;
/// Added to the projected covariance diagonal before inversion, px^2.
pub const COV_FLOOR: f64 = 1e-6;

/// RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Image {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_dims(&self, other: &Image) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "image size mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }
}

/// Screen-space footprint of one splat.
///
/// `cov_px` is the exact projected covariance; the renderer adds
/// [`COV_FLOOR`] to its diagonal before inverting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected2D {
    pub mean_px: [f64; 2],
    pub cov_px: [[f64; 2]; 2],
}

impl Projected2D {
    pub fn regularized_cov(&self) -> [[f64; 2]; 2] {
        let c = self.cov_px;
        [[c[0][0] + COV_FLOOR, c[0][1]], [c[1][0], c[1][1] + COV_FLOOR]]
    }
}

pub fn project(splat: &Splat, cam: &CameraSpec) -> Projected2D {
    let k = cam.magnification();
    let center = cam.center_px();
    let mean_px = [
        k * (splat.mu[0] - cam.offset[0]) + center[0],
        k * (splat.mu[1] - cam.offset[1]) + center[1],
    ];
    let [s1, s2] = splat.scale();
    let (sin, cos) = splat.rot.sin_cos();
    let (v1, v2) = (s1 * s1, s2 * s2);
    let k2 = k * k;
    let xx = k2 * (v1 * cos * cos + v2 * sin * sin);
    let xy = k2 * (v1 - v2) * cos * sin;
    let yy = k2 * (v1 * sin * sin + v2 * cos * cos);
    Projected2D {
        mean_px,
        cov_px: [[xx, xy], [xy, yy]],
    }
}

/// Peak-normalized footprint weight and its derivative in `q`.
///
/// `exp(-q/2)` multiplied by a quintic smoothstep taper on `[TAPER_Q, CULL_Q]`,
/// so the weight is C2 and vanishes identically from `CULL_Q` outwards.
pub(crate) fn footprint(q: f64) -> (f64, f64) {
    if q >= CULL_Q {
        return (0.0, 0.0);
    }
    let e = (-0.5 * q).exp();
    if q <= TAPER_Q {
        return (e, -0.5 * e);
    }
    let span = CULL_Q - TAPER_Q;
    let t = (q - TAPER_Q) / span;
    let w = 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let dw = -30.0 * t * t * (1.0 - t) * (1.0 - t) / span;
    (e * w, e * (dw - 0.5 * w))
}

/// Per-splat quantities shared by the forward and backward passes.
#[derive(Debug, Clone, Copy)]
struct Prepared {
    mean: [f64; 2],
    // Inverse of the regularized covariance: q = a dx^2 + 2 b dx dy + c dy^2.
    conic: [f64; 3],
    alpha: f64,
    color: [f64; 3],
    x_range: (usize, usize),
    y_range: (usize, usize),
    visible: bool,
}

fn prepare(splat: &Splat, cam: &CameraSpec) -> Prepared {
    let proj = project(splat, cam);
    let cov = proj.regularized_cov();
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let conic = [cov[1][1] / det, -cov[0][1] / det, cov[0][0] / det];
    // Outside this box q >= CULL_Q.
    let rx = (CULL_Q * cov[0][0]).sqrt();
    let ry = (CULL_Q * cov[1][1]).sqrt();
    let [mx, my] = proj.mean_px;
    let (x_range, vx) = pixel_range(mx - rx, mx + rx, cam.width);
    let (y_range, vy) = pixel_range(my - ry, my + ry, cam.height);
    Prepared {
        mean: proj.mean_px,
        conic,
        alpha: splat.opacity(),
        color: splat.color.map(|c| c.clamp(0.0, 1.0)),
        x_range,
        y_range,
        visible: vx && vy && det.is_finite() && det > 0.0,
    }
}

fn pixel_range(lo: f64, hi: f64, size: usize) -> ((usize, usize), bool) {
    let lo = lo.ceil().max(0.0);
    let hi = hi.floor().min(size as f64 - 1.0);
    if !(lo <= hi) {
        return ((0, 0), false);
    }
    ((lo as usize, hi as usize + 1), true)
}

/// One splat's contribution at a pixel.
#[derive(Debug, Clone, Copy)]
struct Hit {
    splat: usize,
    dx: f64,
    dy: f64,
    q: f64,
    weight: f64,
    // Effective alpha: opacity times footprint.
    a: f64,
}

struct Rasterizer<'a> {
    prepared: Vec<Prepared>,
    order: Vec<usize>,
    background: [f64; 3],
    cam: &'a CameraSpec,
}

impl<'a> Rasterizer<'a> {
    fn new(scene: &SplatScene, cam: &'a CameraSpec) -> Self {
        Rasterizer {
            prepared: scene.splats.iter().map(|s| prepare(s, cam)).collect(),
            order: scene.draw_order(),
            background: scene.background,
            cam,
        }
    }

    fn hits(&self, x: usize, y: usize, out: &mut Vec<Hit>) {
        out.clear();
        for &i in &self.order {
            let p = &self.prepared[i];
            if !p.visible || x < p.x_range.0 || x >= p.x_range.1 || y < p.y_range.0 || y >= p.y_range.1 {
                continue;
            }
            let dx = x as f64 - p.mean[0];
            let dy = y as f64 - p.mean[1];
            let [a, b, c] = p.conic;
            let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
            if q >= CULL_Q {
                continue;
            }
            let (weight, _) = footprint(q);
            out.push(Hit {
                splat: i,
                dx,
                dy,
                q,
                weight,
                a: p.alpha * weight,
            });
        }
    }

    fn shade(&self, hits: &[Hit]) -> [f64; 3] {
        let mut color = [0.0; 3];
        let mut t = 1.0;
        for h in hits {
            let c = self.prepared[h.splat].color;
            for ch in 0..3 {
                color[ch] += c[ch] * h.a * t;
            }
            t *= 1.0 - h.a;
        }
        for ch in 0..3 {
            color[ch] += self.background[ch] * t;
        }
        color.map(|v| v.clamp(0.0, 1.0))
    }

    fn render(&self) -> Image {
        let (w, h) = (self.cam.width, self.cam.height);
        let mut hits = Vec::new();
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                self.hits(x, y, &mut hits);
                pixels.push(self.shade(&hits));
            }
        }
        Image {
            width: w,
            height: h,
            pixels,
        }
    }
}

/// Front-to-back alpha compositing of `scene` seen from `cam`.
pub fn render(scene: &SplatScene, cam: &CameraSpec) -> Image {
    Rasterizer::new(scene, cam).render()
}

/// Compositing weights at pixel `(x, y)`: `(splat index, weight)` in draw
/// order, plus the residual transmittance that reaches the background.
pub fn composite_weights(scene: &SplatScene, cam: &CameraSpec, x: usize, y: usize) -> (Vec<(usize, f64)>, f64) {
    let raster = Rasterizer::new(scene, cam);
    let mut hits = Vec::new();
    raster.hits(x, y, &mut hits);
    let mut t = 1.0;
    let weights = hits
        .iter()
        .map(|h| {
            let w = h.a * t;
            t *= 1.0 - h.a;
            (h.splat, w)
        })
        .collect();
    (weights, t)
}

#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    alpha: f64,
    color: [f64; 3],
}

/// Loss against `target` and its gradient with respect to every parameter.
pub fn backward(scene: &SplatScene, cam: &CameraSpec, target: &Image, cfg: &LossConfig) -> Result<(f64, GradientSet)> {
    let raster = Rasterizer::new(scene, cam);
    let image = raster.render();
    let (loss, d_image) = loss_and_grad(&image, target, cfg)?;

    let n = scene.splats.len();
    let mut acc = vec![SplatGrad::default(); n];
    let mut hits = Vec::new();
    let mut trans = Vec::new();
    for y in 0..cam.height {
        for x in 0..cam.width {
            let dl_dc = d_image[y * cam.width + x];
            if dl_dc == [0.0; 3] {
                continue;
            }
            raster.hits(x, y, &mut hits);
            if hits.is_empty() {
                continue;
            }
            trans.clear();
            let mut t = 1.0;
            for h in &hits {
                trans.push(t);
                t *= 1.0 - h.a;
            }
            // Color composited underneath the current splat, back to front.
            let mut under = raster.background;
            for (h, &t_i) in hits.iter().zip(&trans).rev() {
                let p = &raster.prepared[h.splat];
                let g = &mut acc[h.splat];
                let mut dl_da = 0.0;
                for ch in 0..3 {
                    dl_da += dl_dc[ch] * t_i * (p.color[ch] - under[ch]);
                    g.color[ch] += dl_dc[ch] * h.a * t_i;
                    under[ch] = p.color[ch] * h.a + (1.0 - h.a) * under[ch];
                }
                g.alpha += dl_da * h.weight;
                let (_, dw_dq) = footprint(h.q);
                let dl_dq = dl_da * p.alpha * dw_dq;
                let [a, b, c] = p.conic;
                g.mean[0] -= dl_dq * 2.0 * (a * h.dx + b * h.dy);
                g.mean[1] -= dl_dq * 2.0 * (b * h.dx + c * h.dy);
                g.conic[0] += dl_dq * h.dx * h.dx;
                g.conic[1] += dl_dq * 2.0 * h.dx * h.dy;
                g.conic[2] += dl_dq * h.dy * h.dy;
            }
        }
    }

    let k = cam.magnification();
    let mut blocks = BlockVectors::zeros(n);
    for (i, (splat, g)) in scene.splats.iter().zip(&acc).enumerate() {
        let p = &raster.prepared[i];
        blocks[BlockKind::Position][2 * i] = k * g.mean[0];
        blocks[BlockKind::Position][2 * i + 1] = k * g.mean[1];

        // dL/dSigma = -Q (dL/dQ) Q with Q the symmetric conic matrix.
        let [a, b, c] = p.conic;
        let (ga, gb, gc) = (g.conic[0], 0.5 * g.conic[1], g.conic[2]);
        // M = (dL/dQ) Q
        let m00 = ga * a + gb * b;
        let m01 = ga * b + gb * c;
        let m10 = gb * a + gc * b;
        let m11 = gb * b + gc * c;
        let s00 = -(a * m00 + b * m10);
        let s01 = -(a * m01 + b * m11);
        let s11 = -(b * m01 + c * m11);

        let [v1, v2] = splat.scale().map(|s| s * s);
        let (sin, cos) = splat.rot.sin_cos();
        let u1 = [cos, sin];
        let u2 = [-sin, cos];
        let quad = |u: [f64; 2], v: [f64; 2]| u[0] * (s00 * v[0] + s01 * v[1]) + u[1] * (s01 * v[0] + s11 * v[1]);
        let k2 = k * k;
        blocks[BlockKind::Scale][2 * i] = 2.0 * k2 * v1 * quad(u1, u1);
        blocks[BlockKind::Scale][2 * i + 1] = 2.0 * k2 * v2 * quad(u2, u2);
        blocks[BlockKind::Rotation][i] = 2.0 * k2 * (v1 - v2) * quad(u1, u2);

        blocks[BlockKind::Opacity][i] = g.alpha * p.alpha * (1.0 - p.alpha);
        for ch in 0..3 {
            let inside = (0.0..=1.0).contains(&splat.color[ch]);
            blocks[BlockKind::Color][3 * i + ch] = if inside { g.color[ch] } else { 0.0 };
        }
    }
    Ok((loss, GradientSet::new(blocks, cam.id, 0)))
}

/// Loss only, without the backward pass.
pub fn render_loss(scene: &SplatScene, cam: &CameraSpec, target: &Image, cfg: &LossConfig) -> Result<f64> {
    photometric_loss(&render(scene, cam), target, cfg)
}
