//! Synthetic event generation from a rendered frame sequence.
//!
//! Per pixel, log brightness is interpolated linearly between consecutive
//! frames and an event fires each time the signal crosses the reference level
//! plus or minus the contrast threshold. The reference level moves by exactly
//! one threshold step per event, which bounds the accumulated quantization
//! error below one step.

use crate::error::{Error, Result};
use crate::event::{Event, EventStream};
use crate::grid::Grid;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SimConfig {
    /// Contrast threshold A in log-intensity units.
    pub contrast_threshold: f64,
    /// Per-pixel dead time after an emitted event; suppressed crossings still
    /// advance the reference level so tracking continues.
    pub refractory_us: u64,
    /// Uniform noise events per pixel per second superimposed on the signal.
    pub noise_rate: f64,
    /// Gamma of the intensity-to-log mapping, shared with the loss config.
    pub gamma: f64,
    /// Epsilon of the log mapping.
    pub epsilon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            contrast_threshold: 0.25,
            refractory_us: 0,
            noise_rate: 0.0,
            gamma: 2.2,
            epsilon: 1e-5,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if !(self.contrast_threshold > 0.0) {
            return Err(Error::InvalidArgument(
                "contrast threshold must be > 0".into(),
            ));
        }
        if self.noise_rate < 0.0 {
            return Err(Error::InvalidArgument("noise rate must be >= 0".into()));
        }
        Ok(())
    }

    #[inline]
    fn log_of(&self, v: f64) -> f64 {
        (v.powf(self.gamma) + self.epsilon).ln()
    }
}

fn validate_sequence(frames: &[Grid], times: &[u64]) -> Result<()> {
    if frames.len() != times.len() || frames.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need >= 2 frames with matching times, got {} frames / {} times",
            frames.len(),
            times.len()
        )));
    }
    for w in times.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidArgument(
                "frame times must be strictly increasing".into(),
            ));
        }
    }
    for f in &frames[1..] {
        frames[0].check_same_resolution(f)?;
    }
    Ok(())
}

/// Simulates the event stream a contrast-threshold sensor would produce while
/// observing `frames` at `times`. Deterministic for a given seed; output is
/// sorted canonically.
pub fn frames_to_events(
    frames: &[Grid],
    times: &[u64],
    cfg: &SimConfig,
    seed: u64,
) -> Result<EventStream> {
    cfg.validate()?;
    validate_sequence(frames, times)?;
    let width = frames[0].width();
    let height = frames[0].height();
    let a = cfg.contrast_threshold;

    // Pixels are independent; parallelize over rows and concatenate in row
    // order so the result is thread-count independent before the final sort.
    let mut events: Vec<Event> = (0..height)
        .into_par_iter()
        .map(|py| {
            let mut row_events = Vec::new();
            for px in 0..width {
                let mut l_ref = cfg.log_of(frames[0].get(px, py));
                let mut last_emitted: Option<u64> = None;
                for fi in 0..frames.len() - 1 {
                    let l_a = cfg.log_of(frames[fi].get(px, py));
                    let l_b = cfg.log_of(frames[fi + 1].get(px, py));
                    let t_a = times[fi];
                    let t_b = times[fi + 1];
                    loop {
                        let polarity = if l_b - l_ref >= a {
                            1i8
                        } else if l_ref - l_b >= a {
                            -1i8
                        } else {
                            break;
                        };
                        let target = l_ref + polarity as f64 * a;
                        let frac = ((target - l_a) / (l_b - l_a)).clamp(0.0, 1.0);
                        let t_cross = t_a as f64 + (t_b - t_a) as f64 * frac;
                        let t_us = (t_cross.floor() as u64).clamp(t_a, t_b);
                        let blocked = match last_emitted {
                            Some(last) => t_us.saturating_sub(last) < cfg.refractory_us,
                            None => false,
                        };
                        if !blocked {
                            row_events.push(Event {
                                x: px as u16,
                                y: py as u16,
                                t: t_us,
                                p: polarity,
                            });
                            last_emitted = Some(t_us);
                        }
                        l_ref = target;
                    }
                }
            }
            row_events
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    if cfg.noise_rate > 0.0 {
        let duration_s = (times[times.len() - 1] - times[0]) as f64 * 1e-6;
        let expected = cfg.noise_rate * (width * height) as f64 * duration_s;
        let count = expected.round() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..count {
            events.push(Event {
                x: rng.gen_range(0..width) as u16,
                y: rng.gen_range(0..height) as u16,
                t: rng.gen_range(times[0]..=times[times.len() - 1]),
                p: if rng.gen_bool(0.5) { 1 } else { -1 },
            });
        }
    }

    EventStream::new(width, height, a, events)
}

/// Consistency check between the trigger model and polarity accumulation:
/// the maximum over pixels of |A * accumulated polarity - true log change|
/// for a noise-free, zero-refractory simulation of the given frames. The
/// bound is structural: strictly below A.
pub fn roundtrip_check(frames: &[Grid], times: &[u64], cfg: &SimConfig) -> Result<f64> {
    let mut clean = *cfg;
    clean.noise_rate = 0.0;
    clean.refractory_us = 0;
    let stream = frames_to_events(frames, times, &clean, 0)?;
    // One past the last time so events at the final instant are included.
    let acc = stream.accumulate(times[0], times[times.len() - 1] + 1)?;
    let first = frames.first().unwrap();
    let last = frames.last().unwrap();
    let mut worst = 0.0f64;
    for py in 0..first.height() {
        for px in 0..first.width() {
            let truth = clean.log_of(last.get(px, py)) - clean.log_of(first.get(px, py));
            let approx = clean.contrast_threshold * acc.get(px, py);
            worst = worst.max((approx - truth).abs());
        }
    }
    Ok(worst)
}
