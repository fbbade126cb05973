//! Event streams, temporal binning into frames, static-image encoding and
//! in-memory frame datasets.

mod io;
mod synth;

pub use io::{
    decode_events, encode_events, load_manifest, read_csv_events, read_events, write_events, write_manifest,
    ManifestEntry, EVENT_MAGIC, EVENT_VERSION,
};
pub use synth::{synth_generate, MotionClass, SynthDataset, SynthParams};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    /// Timestamp in microseconds.
    pub t: u32,
    pub x: u16,
    pub y: u16,
    /// 1 = ON (brightness increase), 0 = OFF.
    pub p: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub width: u16,
    pub height: u16,
    pub label: usize,
}

impl EventStream {
    /// Checks ordering, coordinate bounds and polarity values.
    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.events.windows(2).find(|w| w[1].t < w[0].t) {
            return Err(Error::format(
                "event stream",
                format!("timestamps decrease ({} after {})", w[1].t, w[0].t),
            ));
        }
        if let Some(e) = self
            .events
            .iter()
            .find(|e| e.x >= self.width || e.y >= self.height || e.p > 1)
        {
            return Err(Error::format(
                "event stream",
                format!("event {e:?} outside a {}x{} sensor", self.width, self.height),
            ));
        }
        Ok(())
    }
}

/// Integrate a stream into `[T, 2, H, W]` per-polarity event counts.
///
/// `[t_min, t_max]` is split into `T` equal windows; the event at `t_max`
/// lands in the last window. Sensor coordinates are downsampled by
/// `⌊y·H/H_s⌋`, `⌊x·W/W_s⌋`.
pub fn bin_events(stream: &EventStream, timesteps: usize, height: usize, width: usize) -> Result<Tensor> {
    if timesteps == 0 {
        return Err(Error::TooFewTimesteps {
            what: "bin_events",
            needed: 1,
            got: 0,
        });
    }
    if height == 0 || width == 0 || stream.width == 0 || stream.height == 0 {
        return Err(Error::InvalidParam("binning to an empty frame".into()));
    }
    let (first, last) = match (stream.events.first(), stream.events.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptyStream),
    };
    let (t_min, t_max) = stream
        .events
        .iter()
        .fold((first.t, last.t), |(lo, hi), e| (lo.min(e.t), hi.max(e.t)));
    let span = u64::from(t_max - t_min);
    let plane = height * width;
    let mut counts = vec![0.0; timesteps * 2 * plane];
    for e in &stream.events {
        if e.x >= stream.width || e.y >= stream.height || e.p > 1 {
            return Err(Error::format("event stream", format!("event {e:?} outside the sensor")));
        }
        let window = (u64::from(e.t - t_min) * timesteps as u64)
            .checked_div(span)
            .map_or(0, |w| (w as usize).min(timesteps - 1));
        let row = usize::from(e.y) * height / usize::from(stream.height);
        let col = usize::from(e.x) * width / usize::from(stream.width);
        counts[(window * 2 + usize::from(e.p)) * plane + row * width + col] += 1.0;
    }
    Tensor::new(vec![timesteps, 2, height, width], counts)
}

/// Replicate a normalized `[H, W, C]` image as constant input current over
/// `T` timesteps, returning `[T, C, H, W]`.
pub fn encode_static(image: &Tensor, timesteps: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::InvalidShape {
            op: "encode_static",
            msg: format!("expected [H, W, C], got {s:?}"),
        });
    }
    if timesteps == 0 {
        return Err(Error::TooFewTimesteps {
            what: "encode_static",
            needed: 1,
            got: 0,
        });
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    let src = image.data();
    let chw: Vec<f64> = (0..c)
        .flat_map(|ch| (0..h * w).map(move |i| src[i * c + ch]))
        .collect();
    let mut data = Vec::with_capacity(timesteps * chw.len());
    for _ in 0..timesteps {
        data.extend_from_slice(&chw);
    }
    Tensor::new(vec![timesteps, c, h, w], data)
}

/// Pre-binned samples held in memory, each `[T, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDataset {
    pub frames: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl FrameDataset {
    pub fn from_streams(streams: &[EventStream], timesteps: usize, height: usize, width: usize, classes: usize) -> Result<Self> {
        let frames = streams
            .iter()
            .map(|s| bin_events(s, timesteps, height, width))
            .collect::<Result<Vec<_>>>()?;
        let labels = streams.iter().map(|s| s.label).collect::<Vec<_>>();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidParam(format!("label {bad} with {classes} classes")));
        }
        Ok(Self { frames, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timesteps(&self) -> usize {
        self.frames.first().map_or(0, |f| f.shape()[0])
    }

    /// `[C, H, W]` of one timestep.
    pub fn sample_shape(&self) -> Option<[usize; 3]> {
        self.frames.first().map(|f| {
            let s = f.shape();
            [s[1], s[2], s[3]]
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Gather samples into per-timestep `[B, C, H, W]` inputs plus labels.
    pub fn batch(&self, indices: &[usize]) -> (Vec<Tensor>, Vec<usize>) {
        let t = self.timesteps();
        let per_step = self.frames[0].len() / t;
        let s = self.frames[0].shape();
        let mut steps = vec![Vec::with_capacity(indices.len() * per_step); t];
        for &i in indices {
            let d = self.frames[i].data();
            for (step, buf) in steps.iter_mut().enumerate() {
                buf.extend_from_slice(&d[step * per_step..(step + 1) * per_step]);
            }
        }
        let shape = vec![indices.len(), s[1], s[2], s[3]];
        let inputs = steps
            .into_iter()
            .map(|d| Tensor::new(shape.clone(), d).expect("consistent frame shapes"))
            .collect();
        (inputs, indices.iter().map(|&i| self.labels[i]).collect())
    }
}
