//! Training loss over accumulated event images: gamma-corrected log mapping
//! of rendered frames, linlog-mapped normalized L2 over the event images, and
//! a D-SSIM term, with analytic gradients with respect to the prediction.

use crate::error::Result;
use crate::grid::{AccumImage, Grid};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossConfig {
    /// Gamma applied to rendered intensities before the log mapping.
    pub gamma: f64,
    /// Additive epsilon inside the log, keeps log(0) finite.
    pub epsilon: f64,
    /// Linlog knee: linear below, logarithmic at and above.
    pub linlog_b: f64,
    /// Weight of the D-SSIM term in the total loss.
    pub lambda: f64,
    /// Side of the Gaussian SSIM window.
    pub ssim_window: u32,
    /// Sigma of the Gaussian SSIM window.
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    /// Dynamic range q in the SSIM constants c1=(k1 q)^2, c2=(k2 q)^2.
    /// `total_loss` overrides this per batch from the ground truth.
    pub dynamic_range: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 2.2,
            epsilon: 1e-5,
            linlog_b: 20.0,
            lambda: 0.1,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

/// Value and gradient report of one loss evaluation.
/// `total == event_term + lambda * (1 - dssim_term)`.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub total: f64,
    pub event_term: f64,
    /// The SSIM similarity of the two event images (1 when identical).
    pub dssim_term: f64,
    /// d total / d E_pred.
    pub d_epred: Grid,
}

/// log(I^g + eps) elementwise.
pub fn log_image(image: &Grid, cfg: &LossConfig) -> Grid {
    image.map(|v| (v.powf(cfg.gamma) + cfg.epsilon).ln())
}

/// Elementwise derivative of `log_image`: g I^(g-1) / (I^g + eps).
pub fn log_image_grad(image: &Grid, cfg: &LossConfig) -> Grid {
    image.map(|v| cfg.gamma * v.powf(cfg.gamma - 1.0) / (v.powf(cfg.gamma) + cfg.epsilon))
}

/// Predicted accumulated log-brightness difference between the start view
/// render and the sweep view render: L(I_0) - L(I_k).
pub fn predicted_difference(i0: &Grid, ik: &Grid, cfg: &LossConfig) -> Result<AccumImage> {
    log_image(i0, cfg).zip_map(&log_image(ik, cfg), |a, b| a - b)
}

/// Linlog on a non-negative scalar: linear with slope ln(B)/B below the knee,
/// natural log at and above it; the two branches agree at u = B.
#[inline]
pub fn linlog_scalar(u: f64, b: f64) -> f64 {
    if u < b {
        u * b.ln() / b
    } else {
        u.ln()
    }
}

/// Sign-preserving linlog: sign(u) * linlog(|u|).
#[inline]
pub fn signed_linlog(u: f64, b: f64) -> f64 {
    let v = u.abs();
    if v < b {
        u * b.ln() / b
    } else {
        u.signum() * v.ln()
    }
}

/// Derivative of `signed_linlog`; the linear branch is used at the knee.
#[inline]
fn signed_linlog_deriv(u: f64, b: f64) -> f64 {
    let v = u.abs();
    if v <= b {
        b.ln() / b
    } else {
        1.0 / v
    }
}

/// Elementwise linlog of a non-negative grid.
pub fn linlog(u: &Grid, cfg: &LossConfig) -> Grid {
    u.map(|v| linlog_scalar(v, cfg.linlog_b))
}

/// Normalized L2 event loss: mean over pixels of (L(x)^2 - L(y)^2)^2 with
/// L the sign-preserving linlog. `e_gt` must already be in log-brightness
/// units (polarity sums scaled by the contrast threshold). Returns the loss
/// and its gradient with respect to `e_pred`.
pub fn event_loss(
    e_pred: &AccumImage,
    e_gt: &AccumImage,
    cfg: &LossConfig,
) -> Result<(f64, Grid)> {
    e_pred.check_same_resolution(e_gt)?;
    let n = e_pred.len() as f64;
    let b = cfg.linlog_b;
    let mut loss = 0.0;
    let mut grad = Grid::zeros(e_pred.width(), e_pred.height());
    for (i, (&x, &y)) in e_pred.values().iter().zip(e_gt.values()).enumerate() {
        let lx = signed_linlog(x, b);
        let ly = signed_linlog(y, b);
        let diff = lx * lx - ly * ly;
        loss += diff * diff;
        grad.values_mut()[i] = 4.0 * lx * diff * signed_linlog_deriv(x, b) / n;
    }
    Ok((loss / n, grad))
}

/// Plain mean squared error with gradient, the ablation baseline.
pub fn mse_loss(e_pred: &AccumImage, e_gt: &AccumImage) -> Result<(f64, Grid)> {
    e_pred.check_same_resolution(e_gt)?;
    let n = e_pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Grid::zeros(e_pred.width(), e_pred.height());
    for (i, (&x, &y)) in e_pred.values().iter().zip(e_gt.values()).enumerate() {
        let d = x - y;
        loss += d * d;
        grad.values_mut()[i] = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

/// Normalized 1D Gaussian taps for the SSIM window.
fn gaussian_taps(window: u32, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let mut taps: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Mean SSIM over all fully interior Gaussian-weighted windows, plus the
/// gradient with respect to `x`. Windows larger than the image shrink to fit.
pub fn dssim(x: &Grid, y: &Grid, cfg: &LossConfig) -> Result<(f64, Grid)> {
    dssim_with_range(x, y, cfg, cfg.dynamic_range)
}

pub(crate) fn dssim_with_range(
    x: &Grid,
    y: &Grid,
    cfg: &LossConfig,
    dynamic_range: f64,
) -> Result<(f64, Grid)> {
    x.check_same_resolution(y)?;
    let (w, h) = (x.width() as usize, x.height() as usize);
    let win = (cfg.ssim_window as usize).min(w).min(h).max(1);
    let taps = gaussian_taps(win as u32, cfg.ssim_sigma);
    let c1 = (cfg.ssim_k1 * dynamic_range).powi(2);
    let c2 = (cfg.ssim_k2 * dynamic_range).powi(2);

    let xs = x.values();
    let ys = y.values();
    let n_wx = w - win + 1;
    let n_wy = h - win + 1;
    let n_windows = (n_wx * n_wy) as f64;

    let mut ssim_sum = 0.0;
    let mut grad = Grid::zeros(x.width(), x.height());
    let mut weights = vec![0.0f64; win * win];
    for (dy, ty) in taps.iter().enumerate() {
        for (dx, tx) in taps.iter().enumerate() {
            weights[dy * win + dx] = ty * tx;
        }
    }

    for wy in 0..n_wy {
        for wx in 0..n_wx {
            let mut mu_x = 0.0;
            let mut mu_y = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for dy in 0..win {
                let row = (wy + dy) * w + wx;
                for dx in 0..win {
                    let wgt = weights[dy * win + dx];
                    let xv = xs[row + dx];
                    let yv = ys[row + dx];
                    mu_x += wgt * xv;
                    mu_y += wgt * yv;
                    sxx += wgt * xv * xv;
                    syy += wgt * yv * yv;
                    sxy += wgt * xv * yv;
                }
            }
            let var_x = sxx - mu_x * mu_x;
            let var_y = syy - mu_y * mu_y;
            let cov = sxy - mu_x * mu_y;

            let n1 = 2.0 * mu_x * mu_y + c1;
            let n2 = 2.0 * cov + c2;
            let d1 = mu_x * mu_x + mu_y * mu_y + c1;
            let d2 = var_x + var_y + c2;
            ssim_sum += (n1 * n2) / (d1 * d2);

            // Partials in the (mu_x, var_x, cov) parametrization.
            let d_mu = 2.0 * mu_y * n2 / (d1 * d2) - 2.0 * mu_x * n1 * n2 / (d1 * d1 * d2);
            let d_var = -n1 * n2 / (d1 * d2 * d2);
            let d_cov = 2.0 * n1 / (d1 * d2);
            for dy in 0..win {
                let row = (wy + dy) * w + wx;
                for dx in 0..win {
                    let wgt = weights[dy * win + dx];
                    let xv = xs[row + dx];
                    let yv = ys[row + dx];
                    let g = d_mu * wgt
                        + d_var * 2.0 * wgt * (xv - mu_x)
                        + d_cov * wgt * (yv - mu_y);
                    grad.values_mut()[row + dx] += g / n_windows;
                }
            }
        }
    }
    Ok((ssim_sum / n_windows, grad))
}

/// Combined loss: linlog event term plus lambda * (1 - SSIM). The SSIM
/// dynamic range is max(|e_gt|) floored at 1 for this batch. Gradient chains
/// through both paths.
pub fn total_loss(e_pred: &AccumImage, e_gt: &AccumImage, cfg: &LossConfig) -> Result<LossValue> {
    let (event_term, d_event) = event_loss(e_pred, e_gt, cfg)?;
    let q = e_gt.max_abs().max(1.0);
    let (ssim, d_ssim) = dssim_with_range(e_pred, e_gt, cfg, q)?;
    let d_epred = if cfg.lambda == 0.0 {
        d_event
    } else {
        d_event.zip_map(&d_ssim, |a, b| a - cfg.lambda * b)?
    };
    Ok(LossValue {
        total: event_term + cfg.lambda * (1.0 - ssim),
        event_term,
        dssim_term: ssim,
        d_epred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(w: u32, h: u32, lo: f64, hi: f64, seed: u64) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(w, h, |_, _| rng.gen_range(lo..hi))
    }

    /// Central finite differences of a scalar grid functional.
    fn fd_grad(x: &Grid, h: f64, mut f: impl FnMut(&Grid) -> f64) -> Grid {
        let mut g = Grid::zeros(x.width(), x.height());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.values_mut()[i] += h;
            let mut minus = x.clone();
            minus.values_mut()[i] -= h;
            g.values_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn assert_grad_close(analytic: &Grid, numeric: &Grid, rel: f64, abs_floor: f64) {
        for (i, (&a, &n)) in analytic.values().iter().zip(numeric.values()).enumerate() {
            let err = (a - n).abs();
            let scale = a.abs().max(n.abs()).max(abs_floor);
            assert!(err / scale < rel, "pixel {i}: analytic {a} vs fd {n}");
        }
    }

    #[test]
    fn log_image_closed_forms() {
        let cfg = LossConfig::default();
        let img = Grid::from_vec(2, 1, vec![0.0, 1.0]);
        let out = log_image(&img, &cfg);
        assert_relative_eq!(out.get(0, 0), (1e-5f64).ln(), epsilon = 1e-12);
        assert_relative_eq!(out.get(1, 0), (1.0 + 1e-5f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_image_gradient_matches_fd() {
        let cfg = LossConfig::default();
        let img = random_grid(6, 5, 0.05, 1.0, 1);
        let g = log_image_grad(&img, &cfg);
        let fd = fd_grad(&img, 1e-6, |x| log_image(x, &cfg).values().iter().sum());
        assert_grad_close(&g, &fd, 1e-5, 1e-9);
    }

    #[test]
    fn predicted_difference_identical_is_zero() {
        let cfg = LossConfig::default();
        let img = random_grid(4, 4, 0.0, 1.0, 2);
        let e = predicted_difference(&img, &img, &cfg).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predicted_difference_full_range() {
        let cfg = LossConfig::default();
        let ones = Grid::from_vec(2, 2, vec![1.0; 4]);
        let zeros = Grid::zeros(2, 2);
        let e = predicted_difference(&ones, &zeros, &cfg).unwrap();
        let expected = (1.0 + 1e-5f64).ln() - (1e-5f64).ln();
        for &v in e.values() {
            assert_relative_eq!(v, expected, epsilon = 1e-12);
        }
        assert_relative_eq!(expected, 11.5129, epsilon = 1e-3);
    }

    #[test]
    fn linlog_knee_and_closed_forms() {
        assert_relative_eq!(linlog_scalar(20.0, 20.0), 20f64.ln(), epsilon = 1e-15);
        assert_eq!(linlog_scalar(0.0, 20.0), 0.0);
        assert_relative_eq!(linlog_scalar(1.0, 20.0), 20f64.ln() / 20.0, epsilon = 1e-15);
        // Continuity at the knee.
        let d = 1e-8;
        let below = linlog_scalar(20.0 - d, 20.0);
        let above = linlog_scalar(20.0 + d, 20.0);
        assert!((below - above).abs() < 1e-8);
    }

    #[test]
    fn linlog_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..2000 {
            let u = i as f64 * 0.05;
            let v = linlog_scalar(u, 20.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn event_loss_zero_on_equal_inputs() {
        let cfg = LossConfig::default();
        let x = random_grid(8, 8, -5.0, 5.0, 3);
        let (loss, grad) = event_loss(&x, &x, &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn event_loss_single_pixel_closed_form() {
        let cfg = LossConfig::default();
        let x = Grid::from_vec(1, 1, vec![3.0]);
        let y = Grid::from_vec(1, 1, vec![-1.0]);
        let b = cfg.linlog_b;
        let p = signed_linlog(3.0, b);
        let t = signed_linlog(-1.0, b);
        let (loss, grad) = event_loss(&x, &y, &cfg).unwrap();
        assert_relative_eq!(loss, (p * p - t * t).powi(2), epsilon = 1e-15);
        assert_relative_eq!(
            grad.get(0, 0),
            4.0 * p * (p * p - t * t) * (b.ln() / b),
            epsilon = 1e-15
        );
    }

    #[test]
    fn event_loss_gradient_matches_fd() {
        let cfg = LossConfig::default();
        // Mixed range exercises both linlog branches.
        let x = random_grid(8, 8, -30.0, 30.0, 4);
        let y = random_grid(8, 8, -30.0, 30.0, 5);
        let (_, grad) = event_loss(&x, &y, &cfg).unwrap();
        let fd = fd_grad(&x, 1e-5, |x| event_loss(x, &y, &cfg).unwrap().0);
        assert_grad_close(&grad, &fd, 1e-4, 1e-8);
    }

    #[test]
    fn mse_loss_closed_forms_and_fd() {
        let x = Grid::from_vec(1, 1, vec![3.0]);
        let y = Grid::from_vec(1, 1, vec![1.0]);
        let (loss, grad) = mse_loss(&x, &y).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(grad.get(0, 0), 4.0);

        let x = random_grid(7, 5, -2.0, 2.0, 6);
        let y = random_grid(7, 5, -2.0, 2.0, 7);
        let (_, grad) = mse_loss(&x, &y).unwrap();
        let fd = fd_grad(&x, 1e-6, |x| mse_loss(x, &y).unwrap().0);
        assert_grad_close(&grad, &fd, 1e-6, 1e-10);
    }

    #[test]
    fn dssim_self_similarity_is_exactly_one() {
        let cfg = LossConfig::default();
        let x = random_grid(16, 16, -4.0, 4.0, 8);
        let (ssim, grad) = dssim(&x, &x, &cfg).unwrap();
        assert_eq!(ssim, 1.0);
        assert!(grad.is_finite());
    }

    #[test]
    fn dssim_constant_images_zero_variance() {
        let cfg = LossConfig::default();
        let x = Grid::zeros(16, 16);
        let y = Grid::from_vec(16, 16, vec![1.0; 256]);
        let (ssim, _) = dssim(&x, &y, &cfg).unwrap();
        let c1 = (cfg.ssim_k1 * cfg.dynamic_range).powi(2);
        assert_relative_eq!(ssim, c1 / (1.0 + c1), epsilon = 1e-12);
    }

    #[test]
    fn dssim_gradient_matches_fd() {
        let cfg = LossConfig::default();
        let x = random_grid(13, 12, -2.0, 2.0, 9);
        let y = random_grid(13, 12, -2.0, 2.0, 10);
        let (_, grad) = dssim(&x, &y, &cfg).unwrap();
        let fd = fd_grad(&x, 1e-5, |x| dssim(x, &y, &cfg).unwrap().0);
        assert_grad_close(&grad, &fd, 1e-3, 1e-8);
    }

    #[test]
    fn total_loss_zero_on_identical_inputs() {
        let cfg = LossConfig::default();
        let x = random_grid(16, 16, -4.0, 4.0, 11);
        let v = total_loss(&x, &x, &cfg).unwrap();
        assert_eq!(v.total, 0.0);
        assert_eq!(v.event_term, 0.0);
        assert_eq!(v.dssim_term, 1.0);
    }

    #[test]
    fn total_loss_reduces_to_event_loss_when_lambda_zero() {
        let mut cfg = LossConfig::default();
        cfg.lambda = 0.0;
        let x = random_grid(16, 16, -4.0, 4.0, 12);
        let y = random_grid(16, 16, -4.0, 4.0, 13);
        let v = total_loss(&x, &y, &cfg).unwrap();
        let (ev, d_ev) = event_loss(&x, &y, &cfg).unwrap();
        assert_eq!(v.total, ev);
        assert_eq!(v.d_epred.values(), d_ev.values());
    }

    #[test]
    fn total_loss_gradient_matches_fd() {
        let cfg = LossConfig::default();
        let x = random_grid(16, 16, -4.0, 4.0, 14);
        let y = random_grid(16, 16, -4.0, 4.0, 15);
        let v = total_loss(&x, &y, &cfg).unwrap();
        let fd = fd_grad(&x, 1e-5, |x| total_loss(x, &y, &cfg).unwrap().total);
        assert_grad_close(&v.d_epred, &fd, 1e-3, 1e-8);
    }

    #[test]
    fn invariant_total_combines_terms() {
        let cfg = LossConfig::default();
        let x = random_grid(12, 12, -3.0, 3.0, 16);
        let y = random_grid(12, 12, -3.0, 3.0, 17);
        let v = total_loss(&x, &y, &cfg).unwrap();
        assert_relative_eq!(
            v.total,
            v.event_term + cfg.lambda * (1.0 - v.dssim_term),
            epsilon = 1e-15
        );
    }

    #[test]
    fn resolution_mismatch_is_rejected() {
        let cfg = LossConfig::default();
        let x = Grid::zeros(4, 4);
        let y = Grid::zeros(5, 4);
        assert!(event_loss(&x, &y, &cfg).is_err());
        assert!(dssim(&x, &y, &cfg).is_err());
        assert!(mse_loss(&x, &y).is_err());
        assert!(total_loss(&x, &y, &cfg).is_err());
    }
}
