//! Synthetic delayed-pattern datasets and the binary spike-event file format.
//!
//! # Event file layout
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       1     version (= 1)
//! 1       3     magic b"SPK"
//! 4       2     channels (u16)
//! 6       4     steps (u32)
//! 10      4     sample count (u32)
//! 14      2     class count (u16)
//! 16      ...   samples
//!
//! sample:
//!   2     label (u16)
//!   4     event count n (u32)
//!   6*n   events, each step (u32) then channel (u16), sorted by (step, channel)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::spikes::SpikeTrain;

pub const EVENT_FILE_VERSION: u8 = 1;
pub const EVENT_FILE_MAGIC: &[u8; 3] = b"SPK";
pub const HEADER_BYTES: usize = 16;
pub const SAMPLE_HEADER_BYTES: usize = 6;
pub const EVENT_BYTES: usize = 6;

/// Labeled spike trains sharing one shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub steps: usize,
    pub channels: usize,
    pub classes: usize,
    pub samples: Vec<SpikeTrain>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let part = |range: std::ops::Range<usize>| Dataset {
            steps: self.steps,
            channels: self.channels,
            classes: self.classes,
            samples: self.samples[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
        };
        (part(0..n), part(n..self.len()))
    }
}

/// Parameters of the synthetic task: every class is a fixed set of
/// `(channel, lag)` spikes; classes share channels and differ only in lags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: usize,
    pub channels: usize,
    pub steps: usize,
    pub spikes_per_pattern: usize,
    pub max_lag: usize,
    pub jitter: usize,
    pub noise_rate: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            channels: 20,
            steps: 60,
            spikes_per_pattern: 6,
            max_lag: 12,
            jitter: 1,
            noise_rate: 0.01,
            samples: 1000,
            seed: 0,
        }
    }
}

/// A class template: one spike at `lag` on each listed channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prototype {
    pub spikes: Vec<(usize, usize)>,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Data(m));
        if self.classes == 0 || self.channels == 0 || self.steps == 0 || self.spikes_per_pattern == 0 {
            return fail("synthetic spec counts must be positive".into());
        }
        if self.spikes_per_pattern > self.channels {
            return fail(format!(
                "spikes_per_pattern {} exceeds channels {}",
                self.spikes_per_pattern, self.channels
            ));
        }
        if self.max_lag >= self.steps {
            return fail(format!("max_lag {} must be < steps {}", self.max_lag, self.steps));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return fail("noise_rate must lie in [0,1]".into());
        }
        Ok(())
    }

    /// Draws the per-class templates. All classes use the same channels, so
    /// per-channel spike counts carry no class information.
    pub fn prototypes(&self) -> Result<Vec<Prototype>> {
        self.validate()?;
        let mut rng = seeded_rng(self.seed).substream(0);
        let mut chans: Vec<usize> = (0..self.channels).collect();
        rng.shuffle(&mut chans);
        chans.truncate(self.spikes_per_pattern);
        chans.sort_unstable();
        let mut protos: Vec<Prototype> = Vec::with_capacity(self.classes);
        let distinct_possible = (self.max_lag + 1).pow(self.spikes_per_pattern.min(8) as u32) > self.classes;
        while protos.len() < self.classes {
            let spikes: Vec<(usize, usize)> = chans
                .iter()
                .map(|&c| (c, rng.int_inclusive(0, self.max_lag as i64) as usize))
                .collect();
            let candidate = Prototype { spikes };
            if distinct_possible && protos.contains(&candidate) {
                continue;
            }
            protos.push(candidate);
        }
        Ok(protos)
    }
}

/// Generates `spec.samples` samples with labels cycling through the classes.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    let protos = spec.prototypes()?;
    let mut rng = seeded_rng(spec.seed).substream(1);
    let span = spec.max_lag + spec.jitter;
    let last_onset = spec.steps.saturating_sub(span + 1);
    let mut samples = Vec::with_capacity(spec.samples);
    let mut labels = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let label = i % spec.classes;
        let onset = spec.jitter + rng.below(last_onset.saturating_sub(spec.jitter) + 1);
        let mut train = SpikeTrain::silent(spec.steps, spec.channels)?;
        for &(c, lag) in &protos[label].spikes {
            let j = rng.int_inclusive(-(spec.jitter as i64), spec.jitter as i64);
            let t = (onset as i64 + lag as i64 + j).clamp(0, spec.steps as i64 - 1) as usize;
            train.set(t, c, true);
        }
        if spec.noise_rate > 0.0 {
            for t in 0..spec.steps {
                for c in 0..spec.channels {
                    if rng.bernoulli(spec.noise_rate) {
                        train.set(t, c, true);
                    }
                }
            }
        }
        samples.push(train);
        labels.push(label);
    }
    // Shuffle sample order so any prefix split is class balanced on average.
    let mut order: Vec<usize> = (0..samples.len()).collect();
    rng.shuffle(&mut order);
    let samples = order.iter().map(|&i| samples[i].clone()).collect();
    let labels = order.iter().map(|&i| labels[i]).collect();
    Ok(Dataset {
        steps: spec.steps,
        channels: spec.channels,
        classes: spec.classes,
        samples,
        labels,
    })
}

/// Serializes a dataset into the event file layout.
pub fn encode_events(data: &Dataset) -> Result<Vec<u8>> {
    let too_big = |what: &str| Error::Data(format!("{what} does not fit the event file header"));
    let channels = u16::try_from(data.channels).map_err(|_| too_big("channels"))?;
    let steps = u32::try_from(data.steps).map_err(|_| too_big("steps"))?;
    let count = u32::try_from(data.len()).map_err(|_| too_big("sample count"))?;
    let classes = u16::try_from(data.classes).map_err(|_| too_big("class count"))?;
    let mut out = Vec::with_capacity(HEADER_BYTES);
    out.push(EVENT_FILE_VERSION);
    out.extend_from_slice(EVENT_FILE_MAGIC);
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&steps.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&classes.to_le_bytes());
    for (s, &label) in data.samples.iter().zip(&data.labels) {
        if s.steps() != data.steps || s.channels() != data.channels {
            return Err(Error::Data("sample shape differs from dataset shape".into()));
        }
        let events = s.events();
        out.extend_from_slice(&u16::try_from(label).map_err(|_| too_big("label"))?.to_le_bytes());
        out.extend_from_slice(&(events.len() as u32).to_le_bytes());
        for (t, c) in events {
            out.extend_from_slice(&(t as u32).to_le_bytes());
            out.extend_from_slice(&(c as u16).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses the event file layout.
pub fn decode_events(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    let version = cur.take(1, "version")?[0];
    if version != EVENT_FILE_VERSION {
        return Err(Error::Format {
            offset: 0,
            message: format!("unsupported version {version}"),
        });
    }
    if cur.take(3, "magic")? != EVENT_FILE_MAGIC {
        return Err(Error::Format {
            offset: 1,
            message: "bad magic".into(),
        });
    }
    let channels = cur.u16("channels")? as usize;
    let steps = cur.u32("steps")? as usize;
    let count = cur.u32("sample count")? as usize;
    let classes = cur.u16("class count")? as usize;
    if channels == 0 || steps == 0 {
        return Err(Error::Format {
            offset: 4,
            message: "channels and steps must be positive".into(),
        });
    }
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    let mut labels = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let label_at = cur.pos;
        let label = cur.u16("label")? as usize;
        if label >= classes {
            return Err(Error::Format {
                offset: label_at,
                message: format!("label {label} >= class count {classes}"),
            });
        }
        let n = cur.u32("event count")? as usize;
        let mut train = SpikeTrain::silent(steps, channels)?;
        let mut prev: Option<(usize, usize)> = None;
        for _ in 0..n {
            let at = cur.pos;
            let t = cur.u32("event step")? as usize;
            let c = cur.u16("event channel")? as usize;
            if t >= steps || c >= channels {
                return Err(Error::Format {
                    offset: at,
                    message: format!("event ({t}, {c}) outside {steps}x{channels}"),
                });
            }
            if prev.is_some_and(|p| p >= (t, c)) {
                return Err(Error::Format {
                    offset: at,
                    message: "events not strictly sorted by (step, channel)".into(),
                });
            }
            prev = Some((t, c));
            train.set(t, c, true);
        }
        samples.push(train);
        labels.push(label);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format {
            offset: cur.pos,
            message: "trailing bytes".into(),
        });
    }
    Ok(Dataset {
        steps,
        channels,
        classes,
        samples,
        labels,
    })
}

pub fn write_events(path: &Path, data: &Dataset) -> Result<()> {
    std::fs::write(path, encode_events(data)?)?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Dataset> {
    decode_events(&std::fs::read(path)?)
}

/// Bins raw `(timestamp, channel)` events into a binary train: a bin is set
/// when at least one event falls into it, and each group of `channel_group`
/// adjacent channels is merged the same way.
pub fn bin_events(
    events: &[(u64, usize)],
    duration: u64,
    channels: usize,
    bin_width: u64,
    channel_group: usize,
) -> Result<SpikeTrain> {
    if bin_width == 0 || channel_group == 0 {
        return Err(Error::Data("bin_width and channel_group must be ≥ 1".into()));
    }
    if !channels.is_multiple_of(channel_group) {
        return Err(Error::Data(format!(
            "{channels} channels are not divisible into groups of {channel_group}"
        )));
    }
    let steps = duration.div_ceil(bin_width) as usize;
    let out_channels = channels / channel_group;
    let mut train = SpikeTrain::silent(steps.max(1), out_channels)?;
    for &(ts, c) in events {
        if ts >= duration || c >= channels {
            return Err(Error::Data(format!("event ({ts}, {c}) outside {duration}x{channels}")));
        }
        train.set((ts / bin_width) as usize, c / channel_group, true);
    }
    Ok(train)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(jitter: usize, noise: f64, classes: usize) -> SynthSpec {
        SynthSpec {
            classes,
            jitter,
            noise_rate: noise,
            samples: 200,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(1, 0.01, 8);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = SynthSpec { seed: 6, ..s };
        assert_ne!(generate(&other).unwrap(), generate(&spec(1, 0.01, 8)).unwrap());
    }

    #[test]
    fn infeasible_spec_is_rejected() {
        let s = SynthSpec { spikes_per_pattern: 30, ..Default::default() };
        assert!(generate(&s).is_err());
    }

    #[test]
    fn prototypes_share_channels_and_differ_in_lags() {
        let protos = SynthSpec::default().prototypes().unwrap();
        let chans: Vec<usize> = protos[0].spikes.iter().map(|s| s.0).collect();
        for p in &protos {
            assert_eq!(p.spikes.iter().map(|s| s.0).collect::<Vec<_>>(), chans);
            assert!(p.spikes.iter().all(|&(_, lag)| lag <= 12));
        }
        for i in 0..protos.len() {
            for j in i + 1..protos.len() {
                assert_ne!(protos[i], protos[j]);
            }
        }
    }

    #[test]
    fn event_file_roundtrip() {
        let data = generate(&spec(1, 0.02, 4)).unwrap();
        let bytes = encode_events(&data).unwrap();
        assert_eq!(bytes[0], EVENT_FILE_VERSION);
        assert_eq!(decode_events(&bytes).unwrap(), data);
    }

    #[test]
    fn silent_sample_roundtrips() {
        let data = Dataset {
            steps: 5,
            channels: 3,
            classes: 1,
            samples: vec![SpikeTrain::silent(5, 3).unwrap()],
            labels: vec![0],
        };
        let bytes = encode_events(&data).unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES + SAMPLE_HEADER_BYTES);
        assert_eq!(decode_events(&bytes).unwrap(), data);
    }

    #[test]
    fn malformed_files_report_offsets() {
        let data = generate(&spec(0, 0.0, 2)).unwrap();
        let mut bytes = encode_events(&data).unwrap();
        match decode_events(&bytes[..10]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("{other:?}"),
        }
        // Corrupt the channel of the first event of the first sample.
        let at = HEADER_BYTES + SAMPLE_HEADER_BYTES + 4;
        bytes[at..at + 2].copy_from_slice(&999u16.to_le_bytes());
        match decode_events(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, at - 4),
            other => panic!("{other:?}"),
        }
        bytes[0] = 7;
        assert!(matches!(decode_events(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn sparse_encoding_beats_bitmap_below_density_threshold() {
        // 48 bits per event against one bit per (step, channel) cell.
        let bits_per_event = (EVENT_BYTES * 8) as f64;
        let (steps, channels) = (1000, 500);
        let cells = steps * channels;
        for n in [1000usize, 10_000, 10_416, 10_417, 20_000] {
            let sparse_bits = (n * EVENT_BYTES * 8) as f64;
            let smaller = sparse_bits < cells as f64;
            let density = n as f64 / cells as f64;
            assert_eq!(smaller, density < 1.0 / bits_per_event, "n={n}");
        }
        // And the real encoder spends exactly EVENT_BYTES per event.
        let events: Vec<(usize, usize)> = (0..10_000).map(|i| (i / channels * 2, i % channels)).collect();
        let train = SpikeTrain::from_events(steps, channels, events).unwrap();
        let data = Dataset { steps, channels, classes: 1, samples: vec![train], labels: vec![0] };
        let bytes = encode_events(&data).unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES + SAMPLE_HEADER_BYTES + 10_000 * EVENT_BYTES);
        assert!(10_000 * EVENT_BYTES * 8 < cells);
    }

    #[test]
    fn unit_binning_is_identity() {
        let events = [(0u64, 1usize), (3, 0), (4, 2)];
        let t = bin_events(&events, 5, 3, 1, 1).unwrap();
        assert_eq!(t.events(), vec![(0, 1), (3, 0), (4, 2)]);
    }

    #[test]
    fn binning_saturates() {
        let t = bin_events(&[(10, 0), (12, 0)], 20, 1, 10, 1).unwrap();
        assert_eq!(t.steps(), 2);
        assert_eq!(t.count(), 1);
        assert!(t.get(1, 0));
    }

    #[test]
    fn channel_grouping_reduces_700_to_140() {
        let events: Vec<(u64, usize)> = (0..700).map(|c| (c as u64 % 100, c)).collect();
        let t = bin_events(&events, 100, 700, 10, 5).unwrap();
        assert_eq!(t.channels(), 140);
        assert_eq!(t.steps(), 10);
        assert!(bin_events(&events, 100, 700, 10, 3).is_err());
    }

    /// Nearest-prototype classifier over lag vectors (channel-wise spike times
    /// relative to the earliest prototype channel).
    fn template_accuracy(s: &SynthSpec) -> f64 {
        let protos = s.prototypes().unwrap();
        let data = generate(s).unwrap();
        let chans: Vec<usize> = protos[0].spikes.iter().map(|p| p.0).collect();
        let mut correct = 0;
        for (x, &y) in data.samples.iter().zip(&data.labels) {
            let times: Vec<f64> = chans
                .iter()
                .map(|&c| (0..x.steps()).find(|&t| x.get(t, c)).map_or(0.0, |t| t as f64))
                .collect();
            let best = (0..protos.len())
                .min_by(|&a, &b| {
                    let cost = |k: usize| {
                        let lags: Vec<f64> = protos[k].spikes.iter().map(|p| p.1 as f64).collect();
                        // Best onset alignment under squared error is the mean offset.
                        let off = times.iter().zip(&lags).map(|(t, l)| t - l).sum::<f64>() / lags.len() as f64;
                        times.iter().zip(&lags).map(|(t, l)| (t - l - off).powi(2)).sum::<f64>()
                    };
                    cost(a).total_cmp(&cost(b))
                })
                .unwrap();
            correct += (best == y) as usize;
        }
        correct as f64 / data.len() as f64
    }

    #[test]
    fn clean_two_class_task_is_solved_by_template_matching() {
        assert_eq!(template_accuracy(&spec(0, 0.0, 2)), 1.0);
    }

    #[test]
    fn jitter_degrades_template_matching() {
        let mut accs = Vec::new();
        for jitter in [0, 2, 5] {
            let mean: f64 = (0..4)
                .map(|seed| template_accuracy(&SynthSpec { seed, jitter, noise_rate: 0.0, classes: 8, samples: 200, ..Default::default() }))
                .sum::<f64>()
                / 4.0;
            accs.push(mean);
        }
        assert!(accs[0] >= accs[1] && accs[1] >= accs[2], "{accs:?}");
        assert!(accs[0] > accs[2]);
    }

    #[test]
    fn rate_only_classifier_is_at_chance() {
        let s = SynthSpec { samples: 2000, seed: 9, ..Default::default() };
        let data = generate(&s).unwrap();
        let (train, test) = data.split_at(1000);
        // Nearest class-mean of per-channel spike counts.
        let counts = |x: &SpikeTrain| -> Vec<f64> {
            (0..x.channels()).map(|c| (0..x.steps()).filter(|&t| x.get(t, c)).count() as f64).collect()
        };
        let mut means = vec![vec![0.0; s.channels]; s.classes];
        let mut n = vec![0.0; s.classes];
        for (x, &y) in train.samples.iter().zip(&train.labels) {
            for (m, c) in means[y].iter_mut().zip(counts(x)) {
                *m += c;
            }
            n[y] += 1.0;
        }
        for (m, k) in means.iter_mut().zip(&n) {
            m.iter_mut().for_each(|v| *v /= k);
        }
        let correct = test
            .samples
            .iter()
            .zip(&test.labels)
            .filter(|(x, &y)| {
                let c = counts(x);
                let best = (0..s.classes)
                    .min_by(|&a, &b| {
                        let d = |k: usize| means[k].iter().zip(&c).map(|(m, v)| (m - v).powi(2)).sum::<f64>();
                        d(a).total_cmp(&d(b))
                    })
                    .unwrap();
                best == y
            })
            .count();
        let acc = correct as f64 / test.len() as f64;
        assert!((acc - 1.0 / 8.0).abs() <= 0.05, "rate-only accuracy {acc}");
    }
}
