//! Event records, streams, denoising, and polarity accumulation.

use crate::error::{Error, Result};
use crate::grid::AccumImage;

/// One asynchronous brightness-change record. `p` is +1 for an increase of
/// one contrast-threshold step in log brightness, -1 for a decrease.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    /// Pixel column, 0..W-1.
    pub x: u16,
    /// Pixel row, 0..H-1.
    pub y: u16,
    /// Timestamp in microseconds.
    pub t: u64,
    /// Polarity, exactly -1 or +1.
    pub p: i8,
}

impl Event {
    /// Sort key: time, then (y, x, p) to make equal-time order canonical.
    #[inline]
    pub fn sort_key(&self) -> (u64, u16, u16, i8) {
        (self.t, self.y, self.x, self.p)
    }
}

/// A time-sorted sequence of events with the sensor geometry that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    width: u32,
    height: u32,
    /// Contrast threshold A in log-intensity units. One event represents a
    /// log-brightness change of exactly ±A.
    contrast_threshold: f64,
    events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream, sorting the events into canonical order and checking
    /// bounds and polarity values.
    pub fn new(
        width: u32,
        height: u32,
        contrast_threshold: f64,
        mut events: Vec<Event>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("zero resolution".into()));
        }
        if !(contrast_threshold > 0.0) || !contrast_threshold.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "contrast threshold must be positive, got {contrast_threshold}"
            )));
        }
        for e in &events {
            if e.x as u32 >= width || e.y as u32 >= height {
                return Err(Error::InvalidArgument(format!(
                    "event at ({}, {}) outside {}x{}",
                    e.x, e.y, width, height
                )));
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::InvalidArgument(format!(
                    "polarity must be -1 or +1, got {}",
                    e.p
                )));
            }
        }
        events.sort_by_key(Event::sort_key);
        Ok(EventStream {
            width,
            height,
            contrast_threshold,
            events,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn contrast_threshold(&self) -> f64 {
        self.contrast_threshold
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Index of the first event with `t >= time`.
    fn lower_bound(&self, time: u64) -> usize {
        self.events.partition_point(|e| e.t < time)
    }

    /// Sums event polarities per pixel over the half-open window
    /// `[t_start, t_end)`. Pixels with no events are exactly 0; windows
    /// outside the stream bounds simply contribute nothing.
    pub fn accumulate(&self, t_start: u64, t_end: u64) -> Result<AccumImage> {
        if t_start > t_end {
            return Err(Error::InvalidWindow { t_start, t_end });
        }
        let mut sums = vec![0i64; self.width as usize * self.height as usize];
        let lo = self.lower_bound(t_start);
        let hi = self.lower_bound(t_end);
        for e in &self.events[lo..hi] {
            sums[e.y as usize * self.width as usize + e.x as usize] += e.p as i64;
        }
        Ok(AccumImage::from_vec(
            self.width,
            self.height,
            sums.into_iter().map(|v| v as f64).collect(),
        ))
    }

    /// Prefix accumulation images from `t0` up to each of `view_times`.
    /// Element k equals `accumulate(t0, view_times[k])` exactly.
    pub fn split_windows(&self, t0: u64, view_times: &[u64]) -> Result<Vec<AccumImage>> {
        for w in view_times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidArgument(format!(
                    "view times must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&first) = view_times.first() {
            if first < t0 {
                return Err(Error::InvalidWindow {
                    t_start: t0,
                    t_end: first,
                });
            }
        }
        // One pass over the stream; integer sums make the incremental
        // snapshots bit-identical to independent accumulate() calls.
        let mut sums = vec![0i64; self.width as usize * self.height as usize];
        let mut out = Vec::with_capacity(view_times.len());
        let mut idx = self.lower_bound(t0);
        for &t_end in view_times {
            while idx < self.events.len() && self.events[idx].t < t_end {
                let e = &self.events[idx];
                sums[e.y as usize * self.width as usize + e.x as usize] += e.p as i64;
                idx += 1;
            }
            out.push(AccumImage::from_vec(
                self.width,
                self.height,
                sums.iter().map(|&v| v as f64).collect(),
            ));
        }
        Ok(out)
    }

    /// Background-activity denoiser. An event is retained iff some
    /// strictly-earlier event in the stream happened within `radius` pixels
    /// (Chebyshev distance, own pixel included) and within the preceding
    /// `tau_us` microseconds. All input events act as potential supporters,
    /// whether or not they are themselves retained.
    pub fn background_activity_filter(&self, tau_us: u64, radius: u32) -> Result<EventStream> {
        if tau_us == 0 {
            return Err(Error::InvalidArgument("tau must be positive".into()));
        }
        if radius == 0 {
            return Err(Error::InvalidArgument("radius must be >= 1".into()));
        }
        // Last-seen timestamps per pixel, encoded as t+1 so 0 means "never".
        let mut last = vec![0u64; self.width as usize * self.height as usize];
        let mut kept = Vec::new();
        for e in &self.events {
            let x0 = e.x.saturating_sub(radius as u16) as u32;
            let x1 = (e.x as u32 + radius).min(self.width - 1);
            let y0 = e.y.saturating_sub(radius as u16) as u32;
            let y1 = (e.y as u32 + radius).min(self.height - 1);
            let mut supported = false;
            'scan: for ny in y0..=y1 {
                for nx in x0..=x1 {
                    let stamp = last[ny as usize * self.width as usize + nx as usize];
                    if stamp > 0 && e.t - (stamp - 1) <= tau_us {
                        supported = true;
                        break 'scan;
                    }
                }
            }
            if supported {
                kept.push(*e);
            }
            last[e.y as usize * self.width as usize + e.x as usize] = e.t + 1;
        }
        Ok(EventStream {
            width: self.width,
            height: self.height,
            contrast_threshold: self.contrast_threshold,
            events: kept,
        })
    }
}
