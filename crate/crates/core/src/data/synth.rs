//! Synthetic moving-bar event streams.
//!
//! A bright bar of random thickness and length slides across the sensor one
//! pixel per step. Each step, pixels of the newly covered line emit ON events
//! and pixels of the newly uncovered line emit OFF events: `burst` attempts
//! per pixel, each succeeding with probability `emit_prob`. A stream never
//! comes out empty. Uniform background events are added at `noise_rate`
//! times the number of signal events.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Event, EventStream};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MotionClass {
    Left,
    Right,
    Up,
    Down,
}

impl MotionClass {
    pub const ALL: [MotionClass; 4] = [MotionClass::Left, MotionClass::Right, MotionClass::Up, MotionClass::Down];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Result<Self> {
        Self::ALL
            .get(label)
            .copied()
            .ok_or_else(|| Error::InvalidParam(format!("no motion class {label}")))
    }

    pub fn horizontal(self) -> bool {
        matches!(self, MotionClass::Left | MotionClass::Right)
    }

    /// Whether the bar moves towards decreasing coordinates.
    pub fn reversed(self) -> bool {
        matches!(self, MotionClass::Left | MotionClass::Up)
    }
}

impl fmt::Display for MotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionClass::Left => "bar-left",
            MotionClass::Right => "bar-right",
            MotionClass::Up => "bar-up",
            MotionClass::Down => "bar-down",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub width: u16,
    pub height: u16,
    pub train_count: usize,
    pub test_count: usize,
    pub duration_us: u32,
    /// Inclusive range of bar thickness along the motion axis.
    pub thickness: (u16, u16),
    /// Inclusive range of bar length across the motion axis.
    pub length: (u16, u16),
    /// Inclusive range of the number of one-pixel steps taken.
    pub travel: (u16, u16),
    /// Emission attempts per edge pixel per step, each succeeding with `emit_prob`.
    pub burst: u16,
    pub emit_prob: f64,
    pub noise_rate: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            width: 24,
            height: 24,
            train_count: 400,
            test_count: 100,
            duration_us: 100_000,
            thickness: (2, 4),
            length: (6, 16),
            travel: (6, 14),
            burst: 2,
            emit_prob: 0.04,
            noise_rate: 0.05,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(format!("synthetic data: {m}")));
        let min_extent = self.width.min(self.height);
        if self.thickness.0 == 0 || self.thickness.0 > self.thickness.1 {
            return bad("thickness range");
        }
        if self.length.0 == 0 || self.length.0 > self.length.1 || self.length.1 > min_extent {
            return bad("length range");
        }
        if self.travel.0 == 0 || self.travel.0 > self.travel.1 {
            return bad("travel range");
        }
        if u32::from(self.thickness.1) + u32::from(self.travel.1) > u32::from(min_extent) {
            return bad("bar cannot traverse the sensor");
        }
        if self.burst == 0 {
            return bad("burst must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.emit_prob) || self.emit_prob == 0.0 {
            return bad("emit probability");
        }
        if !(self.noise_rate >= 0.0) {
            return bad("noise rate");
        }
        if u32::from(self.travel.1) > self.duration_us {
            return bad("duration too short");
        }
        Ok(())
    }
}

/// Hidden geometry of one generated stream, in motion-axis coordinates
/// (`along` is x for horizontal motion, y for vertical; mirrored for
/// reversed directions).
#[derive(Clone, Debug, PartialEq)]
pub struct BarGeometry {
    pub class: MotionClass,
    /// Leading-side coordinate of the bar's rear before the first step.
    pub start: u16,
    pub thickness: u16,
    pub steps: u16,
    pub step_us: u32,
    pub cross_lo: u16,
    pub cross_len: u16,
    pub signal_events: usize,
}

impl BarGeometry {
    /// Mirrored along-axis coordinate back to sensor coordinates.
    fn unmirror(&self, along: u16, extent: u16) -> u16 {
        if self.class.reversed() {
            extent - 1 - along
        } else {
            along
        }
    }

    /// Sensor coordinate (along the motion axis) of the ON and OFF lines of step `k` (1-based).
    pub fn edges(&self, k: u16, extent: u16) -> (u16, u16) {
        let rear = self.start + k;
        let on = rear + self.thickness - 1;
        let off = rear - 1;
        (self.unmirror(on, extent), self.unmirror(off, extent))
    }
}

/// Generate one stream of the given class; a pure function of `(class, seed, params)`.
pub fn synth_generate(class: MotionClass, seed: u64, params: &SynthParams) -> Result<(EventStream, BarGeometry)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (along_extent, cross_extent) = if class.horizontal() {
        (params.width, params.height)
    } else {
        (params.height, params.width)
    };
    let thickness = rng.random_range(params.thickness.0..=params.thickness.1);
    let steps = rng.random_range(params.travel.0..=params.travel.1);
    let cross_len = rng.random_range(params.length.0..=params.length.1);
    let cross_lo = rng.random_range(0..=cross_extent - cross_len);
    let start = rng.random_range(0..=along_extent - thickness - steps);
    let step_us = params.duration_us / u32::from(steps);
    let mut geom = BarGeometry {
        class,
        start,
        thickness,
        steps,
        step_us,
        cross_lo,
        cross_len,
        signal_events: 0,
    };

    let mut events = Vec::new();
    let place = |along: u16, cross: u16| if class.horizontal() { (along, cross) } else { (cross, along) };
    for k in 1..=steps {
        let (on, off) = geom.edges(k, along_extent);
        let t0 = u32::from(k - 1) * step_us;
        for cross in cross_lo..cross_lo + cross_len {
            for (line, p) in [(on, 1u8), (off, 0u8)] {
                for _ in 0..params.burst {
                    if rng.random_bool(params.emit_prob) {
                        let (x, y) = place(line, cross);
                        let t = t0 + rng.random_range(0..step_us);
                        events.push(Event { t, x, y, p });
                    }
                }
            }
        }
    }
    if events.is_empty() {
        // a sparse draw can miss every attempt; keep one leading-edge event
        let (on, _) = geom.edges(1, along_extent);
        let (x, y) = place(on, rng.random_range(cross_lo..cross_lo + cross_len));
        events.push(Event {
            t: rng.random_range(0..step_us),
            x,
            y,
            p: 1,
        });
    }
    geom.signal_events = events.len();

    let noise = (params.noise_rate * events.len() as f64).round() as usize;
    let span = u32::from(steps) * step_us;
    for _ in 0..noise {
        events.push(Event {
            t: rng.random_range(0..span),
            x: rng.random_range(0..params.width),
            y: rng.random_range(0..params.height),
            p: rng.random_range(0..=1),
        });
    }
    events.sort_by_key(|e| e.t);
    Ok((
        EventStream {
            events,
            width: params.width,
            height: params.height,
            label: class.label(),
        },
        geom,
    ))
}

/// A labelled train/test split generated from one global seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub train: Vec<EventStream>,
    pub test: Vec<EventStream>,
}

/// RNG stream indices used to derive per-sample seeds.
const TRAIN_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1;

impl SynthDataset {
    /// Classes cycle through `MotionClass::ALL` so both splits are balanced
    /// whenever their sizes are multiples of four.
    pub fn generate(seed: u64, params: &SynthParams) -> Result<Self> {
        let split = |stream: u64, count: usize| -> Result<Vec<EventStream>> {
            let mut seeds = ChaCha8Rng::seed_from_u64(seed);
            seeds.set_stream(stream);
            (0..count)
                .map(|i| {
                    let class = MotionClass::ALL[i % 4];
                    synth_generate(class, seeds.random(), params).map(|(s, _)| s)
                })
                .collect()
        };
        Ok(Self {
            train: split(TRAIN_STREAM, params.train_count)?,
            test: split(TEST_STREAM, params.test_count)?,
        })
    }
}
