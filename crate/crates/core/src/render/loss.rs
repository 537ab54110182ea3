//! Photometric loss, SSIM and PSNR.

use super::Image;
use crate::error::{Error, Result};

/// Reported PSNR when the MSE falls below `1e-10`.
pub const PSNR_CAP_DB: f64 = 99.0;

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// `(1 - lambda) L1 + lambda (1 - SSIM) / 2`, with a Gaussian SSIM window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_ssim: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_ssim: 0.2,
            ssim_window: 7,
            ssim_sigma: 1.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return Err(Error::invalid(format!(
                "lambda_ssim must be in [0, 1], got {}",
                self.lambda_ssim
            )));
        }
        if self.ssim_window % 2 == 0 {
            return Err(Error::invalid("ssim_window must be odd"));
        }
        if !(self.ssim_sigma > 0.0) {
            return Err(Error::invalid("ssim_sigma must be positive"));
        }
        Ok(())
    }

    fn kernel(&self) -> Vec<f64> {
        let half = (self.ssim_window / 2) as f64;
        let raw: Vec<f64> = (0..self.ssim_window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.ssim_sigma * self.ssim_sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// Separable Gaussian blur with zero padding and same-size output.
///
/// The kernel is symmetric, so this operator is its own transpose.
struct Blur {
    kernel: Vec<f64>,
    width: usize,
    height: usize,
}

impl Blur {
    fn apply(&self, src: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let half = self.kernel.len() / 2;
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in self.kernel.iter().enumerate() {
                    let sx = x as isize + k as isize - half as isize;
                    if sx >= 0 && (sx as usize) < w {
                        acc += kv * src[y * w + sx as usize];
                    }
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in self.kernel.iter().enumerate() {
                    let sy = y as isize + k as isize - half as isize;
                    if sy >= 0 && (sy as usize) < h {
                        acc += kv * tmp[sy as usize * w + x];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    }
}

fn channel(img: &Image, ch: usize) -> Vec<f64> {
    img.pixels.iter().map(|p| p[ch]).collect()
}

/// Mean SSIM over all pixels and channels, and optionally its gradient with
/// respect to `x`.
fn ssim_impl(x: &Image, y: &Image, cfg: &LossConfig, with_grad: bool) -> (f64, Option<Vec<[f64; 3]>>) {
    let blur = Blur {
        kernel: cfg.kernel(),
        width: x.width,
        height: x.height,
    };
    let n = x.pixels.len();
    let count = (3 * n) as f64;
    let mut total = 0.0;
    let mut grad = with_grad.then(|| vec![[0.0; 3]; n]);
    for ch in 0..3 {
        let xc = channel(x, ch);
        let yc = channel(y, ch);
        let xx: Vec<f64> = xc.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = yc.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xc.iter().zip(&yc).map(|(a, b)| a * b).collect();
        let mu_x = blur.apply(&xc);
        let mu_y = blur.apply(&yc);
        let e_xx = blur.apply(&xx);
        let e_yy = blur.apply(&yy);
        let e_xy = blur.apply(&xy);

        let mut d_mu = vec![0.0; n];
        let mut d_exx = vec![0.0; n];
        let mut d_exy = vec![0.0; n];
        for p in 0..n {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * (e_xy[p] - mx * my) + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = (e_xx[p] - mx * mx) + (e_yy[p] - my * my) + C2;
            let den = b1 * b2;
            let s = a1 * a2 / den;
            total += s;
            if with_grad {
                // Partials of s in (mu_x, E[x^2], E[xy]). Written so that they
                // cancel exactly when x == y.
                let num_d = 2.0 * my * (a2 - a1);
                let den_d = 2.0 * mx * (b2 - b1);
                d_mu[p] = (num_d - s * den_d) / den;
                d_exx[p] = -s / b2;
                d_exy[p] = 2.0 * (a1 / b1) / b2;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let g_mu = blur.apply(&d_mu);
            let g_exx = blur.apply(&d_exx);
            let g_exy = blur.apply(&d_exy);
            for p in 0..n {
                grad[p][ch] = (g_mu[p] + 2.0 * xc[p] * g_exx[p] + yc[p] * g_exy[p]) / count;
            }
        }
    }
    (total / count, grad)
}

pub fn ssim(img: &Image, target: &Image, cfg: &LossConfig) -> Result<f64> {
    img.check_dims(target)?;
    cfg.validate()?;
    Ok(ssim_impl(img, target, cfg, false).0)
}

pub fn photometric_loss(img: &Image, target: &Image, cfg: &LossConfig) -> Result<f64> {
    img.check_dims(target)?;
    cfg.validate()?;
    let l1 = mean_abs(img, target);
    if cfg.lambda_ssim == 0.0 {
        return Ok(l1);
    }
    let s = ssim_impl(img, target, cfg, false).0;
    Ok((1.0 - cfg.lambda_ssim) * l1 + cfg.lambda_ssim * (1.0 - s) / 2.0)
}

fn mean_abs(img: &Image, target: &Image) -> f64 {
    let sum: f64 = img
        .pixels
        .iter()
        .zip(&target.pixels)
        .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
        .sum();
    sum / (3 * img.pixels.len()) as f64
}

/// Loss and its gradient with respect to every output pixel.
///
/// The L1 term uses subgradient 0 at zero residual.
pub(crate) fn loss_and_grad(img: &Image, target: &Image, cfg: &LossConfig) -> Result<(f64, Vec<[f64; 3]>)> {
    let loss = photometric_loss(img, target, cfg)?;
    let lam = cfg.lambda_ssim;
    let l1_scale = (1.0 - lam) / (3 * img.pixels.len()) as f64;
    let mut grad: Vec<[f64; 3]> = img
        .pixels
        .iter()
        .zip(&target.pixels)
        .map(|(a, b)| {
            let mut g = [0.0; 3];
            for c in 0..3 {
                let r = a[c] - b[c];
                g[c] = if r > 0.0 {
                    l1_scale
                } else if r < 0.0 {
                    -l1_scale
                } else {
                    0.0
                };
            }
            g
        })
        .collect();
    if lam > 0.0 {
        let (_, ssim_grad) = ssim_impl(img, target, cfg, true);
        for (g, s) in grad.iter_mut().zip(ssim_grad.unwrap_or_default()) {
            for c in 0..3 {
                g[c] -= 0.5 * lam * s[c];
            }
        }
    }
    Ok((loss, grad))
}

/// `10 log10(1 / MSE)` over all channels, capped at [`PSNR_CAP_DB`].
pub fn psnr(img: &Image, target: &Image) -> Result<f64> {
    img.check_dims(target)?;
    let sum: f64 = img
        .pixels
        .iter()
        .zip(&target.pixels)
        .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).powi(2)))
        .sum();
    let mse = sum / (3 * img.pixels.len()) as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(w: usize, h: usize, seed: u64) -> Image {
        // Cheap deterministic texture; enough for metric checks.
        let pixels = (0..w * h)
            .map(|i| {
                let v = ((i as u64).wrapping_mul(2654435761).wrapping_add(seed * 97) % 1000) as f64;
                let t = v / 1000.0;
                [0.1 + 0.8 * t, 0.9 - 0.7 * t, 0.5 + 0.3 * (t - 0.5)]
            })
            .collect();
        Image::from_pixels(w, h, pixels).unwrap()
    }

    /// Direct per-pixel window sums, no separable shortcut.
    fn brute_ssim(x: &Image, y: &Image, cfg: &LossConfig) -> f64 {
        let half = (cfg.ssim_window / 2) as isize;
        let g1: Vec<f64> = (-half..=half)
            .map(|d| (-((d * d) as f64) / (2.0 * cfg.ssim_sigma.powi(2))).exp())
            .collect();
        let norm: f64 = g1.iter().sum();
        let mut total = 0.0;
        for ch in 0..3 {
            for py in 0..x.height as isize {
                for px in 0..x.width as isize {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -half..=half {
                        for dx in -half..=half {
                            let (qx, qy) = (px + dx, py + dy);
                            if qx < 0 || qy < 0 || qx >= x.width as isize || qy >= x.height as isize {
                                continue;
                            }
                            let w = g1[(dy + half) as usize] * g1[(dx + half) as usize] / (norm * norm);
                            let a = x.get(qx as usize, qy as usize)[ch];
                            let b = y.get(qx as usize, qy as usize)[ch];
                            mx += w * a;
                            my += w * b;
                            sxx += w * a * a;
                            syy += w * b * b;
                            sxy += w * a * b;
                        }
                    }
                    let vx = sxx - mx * mx;
                    let vy = syy - my * my;
                    let cxy = sxy - mx * my;
                    total += (2.0 * mx * my + C1) * (2.0 * cxy + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2));
                }
            }
        }
        total / (3 * x.pixels.len()) as f64
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let a = noise_image(12, 10, 1);
        assert_eq!(photometric_loss(&a, &a, &LossConfig::default()).unwrap(), 0.0);
        assert!((ssim(&a, &a, &LossConfig::default()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn constant_l1() {
        let cfg = LossConfig {
            lambda_ssim: 0.0,
            ..LossConfig::default()
        };
        let a = Image::filled(8, 8, [0.5; 3]);
        let b = Image::filled(8, 8, [0.0; 3]);
        assert_eq!(photometric_loss(&a, &b, &cfg).unwrap(), 0.5);
    }

    #[test]
    fn psnr_of_constant_offset() {
        let b = noise_image(8, 8, 3);
        let a = Image {
            pixels: b.pixels.iter().map(|p| p.map(|v| v + 0.1)).collect(),
            ..b.clone()
        };
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let s = ssim(&a, &b, &LossConfig::default()).unwrap();
        assert!((s - brute_ssim(&a, &b, &LossConfig::default())).abs() < 1e-10);
    }

    #[test]
    fn loss_matches_brute_force_ssim() {
        let cfg = LossConfig::default();
        let y = noise_image(16, 12, 5);
        let x = Image {
            pixels: y.pixels.iter().map(|p| p.map(|v| v + 0.1)).collect(),
            ..y.clone()
        };
        let l1 = 0.1;
        let expected = (1.0 - cfg.lambda_ssim) * l1 + cfg.lambda_ssim * (1.0 - brute_ssim(&x, &y, &cfg)) / 2.0;
        let got = photometric_loss(&x, &y, &cfg).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn ssim_gradient_matches_central_differences() {
        let cfg = LossConfig {
            lambda_ssim: 1.0,
            ..LossConfig::default()
        };
        let x = noise_image(9, 7, 2);
        let y = noise_image(9, 7, 8);
        let (_, g) = loss_and_grad(&x, &y, &cfg).unwrap();
        let h = 1e-6;
        for idx in [0usize, 13, 31, 62] {
            for ch in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.pixels[idx][ch] += h;
                xm.pixels[idx][ch] -= h;
                let fd =
                    (photometric_loss(&xp, &y, &cfg).unwrap() - photometric_loss(&xm, &y, &cfg).unwrap()) / (2.0 * h);
                assert!(
                    (fd - g[idx][ch]).abs() < 1e-8 * (1.0 + fd.abs()),
                    "{fd} vs {}",
                    g[idx][ch]
                );
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = Image::filled(8, 8, [0.5; 3]);
        let b = Image::filled(8, 9, [0.5; 3]);
        let cfg = LossConfig::default();
        assert!(matches!(photometric_loss(&a, &b, &cfg), Err(Error::InvalidArgument(_))));
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = LossConfig {
            lambda_ssim: 1.5,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossConfig {
            ssim_window: 6,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
