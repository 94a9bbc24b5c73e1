//! Event accumulation and denoising against brute-force oracles, plus the
//! stream-level algebraic invariants as property tests.

mod common;

use evsplat_core::event::{Event, EventStream};
use evsplat_reference::{accumulate_oracle, noise_filter_oracle};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_stream(seed: u64, count: usize, w: u32, h: u32, t_max: u64) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..count)
        .map(|_| Event {
            x: rng.gen_range(0..w) as u16,
            y: rng.gen_range(0..h) as u16,
            t: rng.gen_range(0..t_max),
            p: if rng.gen_bool(0.5) { 1 } else { -1 },
        })
        .collect();
    EventStream::new(w, h, 0.25, events).unwrap()
}

#[test]
fn accumulate_matches_scalar_loop_on_random_streams() {
    let stream = random_stream(1, 10_000, 32, 32, 1_000_000);
    for (t0, t1) in [(0, 1_000_000), (100_000, 400_000), (999_999, 1_000_000)] {
        let ours = stream.accumulate(t0, t1).unwrap();
        let oracle = accumulate_oracle(&stream, t0, t1);
        assert_eq!(ours.values(), oracle.values());
    }
}

#[test]
fn split_windows_match_independent_accumulates() {
    let stream = random_stream(2, 20_000, 24, 18, 2_500_000);
    let t0 = 10_000u64;
    let times: Vec<u64> = (1..=250).map(|k| t0 + k * 9_000).collect();
    let windows = stream.split_windows(t0, &times).unwrap();
    assert_eq!(windows.len(), 250);
    for (k, img) in windows.iter().enumerate() {
        let direct = stream.accumulate(t0, times[k]).unwrap();
        assert_eq!(img.values(), direct.values(), "window {k}");
    }
}

#[test]
fn noise_filter_matches_neighbor_scan_oracle() {
    // Dense edge-following signal plus uniform salt noise.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, h) = (32u32, 32u32);
    let mut events = Vec::new();
    // Signal: a vertical edge sweeping left to right, firing a column burst
    // every 1000 us with small jitter.
    for step in 0..w {
        let t0 = step as u64 * 1_000;
        for y in 0..h {
            events.push(Event {
                x: step as u16,
                y: y as u16,
                t: t0 + rng.gen_range(0..200),
                p: 1,
            });
        }
    }
    // Salt noise, uniform over space and time.
    for _ in 0..800 {
        events.push(Event {
            x: rng.gen_range(0..w) as u16,
            y: rng.gen_range(0..h) as u16,
            t: rng.gen_range(0..(w as u64 * 1_000)),
            p: if rng.gen_bool(0.5) { 1 } else { -1 },
        });
    }
    let stream = EventStream::new(w, h, 0.25, events).unwrap();
    for (tau, radius) in [(500u64, 1u32), (2_000, 1), (500, 2)] {
        let ours = stream.background_activity_filter(tau, radius).unwrap();
        let kept = noise_filter_oracle(&stream, tau, radius);
        let expected: Vec<Event> = kept.iter().map(|&i| stream.events()[i]).collect();
        assert_eq!(ours.events(), expected.as_slice(), "tau={tau} radius={radius}");
        assert!(ours.len() < stream.len());
    }
}

#[test]
fn filter_keeps_all_but_first_of_a_connected_burst() {
    // Every event after the first has a same-pixel-neighborhood predecessor
    // within tau.
    let events: Vec<Event> = (0..50)
        .map(|i| Event {
            x: (5 + (i % 3)) as u16,
            y: 7,
            t: 1_000 + i as u64 * 10,
            p: 1,
        })
        .collect();
    let stream = EventStream::new(16, 16, 0.25, events).unwrap();
    let filtered = stream.background_activity_filter(10_000, 1).unwrap();
    assert_eq!(filtered.len(), stream.len() - 1);
    assert_eq!(filtered.events(), &stream.events()[1..]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// accumulate(a, b) + accumulate(b, c) == accumulate(a, c) elementwise.
    #[test]
    fn accumulation_is_linear_over_windows(
        seed in 0u64..1_000,
        splits in prop::array::uniform2(0u64..100_000),
    ) {
        let stream = random_stream(seed, 500, 16, 16, 100_000);
        let mut ts = [splits[0], splits[1]];
        ts.sort_unstable();
        let (a, b, c) = (0, ts[0], ts[1]);
        let left = stream.accumulate(a, b).unwrap();
        let right = stream.accumulate(b, c).unwrap();
        let full = stream.accumulate(a, c).unwrap();
        let sum = left.zip_map(&right, |x, y| x + y).unwrap();
        prop_assert_eq!(sum.values(), full.values());
    }

    /// Negating every polarity negates the accumulated image exactly.
    #[test]
    fn polarity_negation_negates_the_image(seed in 0u64..1_000) {
        let stream = random_stream(seed, 300, 12, 12, 50_000);
        let negated = EventStream::new(
            12,
            12,
            stream.contrast_threshold(),
            stream.events().iter().map(|e| Event { p: -e.p, ..*e }).collect(),
        )
        .unwrap();
        let img = stream.accumulate(0, 50_000).unwrap();
        let neg = negated.accumulate(0, 50_000).unwrap();
        let flipped = img.map(|v| -v);
        prop_assert_eq!(neg.values(), flipped.values());
    }

    /// The filter output is a subsequence of its input.
    #[test]
    fn filter_output_is_an_ordered_subset(
        seed in 0u64..1_000,
        tau in 1u64..5_000,
        radius in 1u32..3,
    ) {
        let stream = random_stream(seed, 400, 16, 16, 20_000);
        let filtered = stream.background_activity_filter(tau, radius).unwrap();
        prop_assert!(filtered.len() <= stream.len());
        // Every kept event appears in the input in the same relative order.
        let mut input_iter = stream.events().iter();
        for kept in filtered.events() {
            prop_assert!(input_iter.any(|e| e == kept));
        }
        prop_assert_eq!(filtered.resolution(), stream.resolution());
        prop_assert_eq!(filtered.contrast_threshold(), stream.contrast_threshold());
    }
}
