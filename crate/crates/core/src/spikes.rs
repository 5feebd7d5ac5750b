use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Binary activity over `(time step, channel)`, stored row-major by time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeTrain {
    steps: usize,
    channels: usize,
    data: Vec<u8>,
}

impl SpikeTrain {
    /// An all-silent train.
    pub fn silent(steps: usize, channels: usize) -> Result<Self> {
        if steps == 0 || channels == 0 {
            return Err(Error::Data(format!(
                "spike train needs steps >= 1 and channels >= 1, got {steps}x{channels}"
            )));
        }
        Ok(Self {
            steps,
            channels,
            data: vec![0; steps * channels],
        })
    }

    /// Builds a train from a dense 0/1 buffer laid out `[t * channels + c]`.
    pub fn from_dense(steps: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        let mut train = Self::silent(steps, channels)?;
        if data.len() != steps * channels {
            return Err(shape_err("SpikeTrain::from_dense", steps * channels, data.len()));
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(Error::Data(format!(
                "spike entries must be 0 or 1, found {} at index {pos}",
                data[pos]
            )));
        }
        train.data = data;
        Ok(train)
    }

    /// Builds a train from `(step, channel)` events. Duplicates saturate to 1.
    pub fn from_events(
        steps: usize,
        channels: usize,
        events: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut train = Self::silent(steps, channels)?;
        for (t, c) in events {
            if t >= steps || c >= channels {
                return Err(Error::Data(format!(
                    "event ({t}, {c}) outside {steps}x{channels} train"
                )));
            }
            train.set(t, c, true);
        }
        Ok(train)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, t: usize, c: usize) -> bool {
        self.data[t * self.channels + c] != 0
    }

    pub fn set(&mut self, t: usize, c: usize, spike: bool) {
        self.data[t * self.channels + c] = spike as u8;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    /// Spikes at step `t`, one entry per channel.
    pub fn step(&self, t: usize) -> &[u8] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Sorted `(step, channel)` list of active entries.
    pub fn events(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| (i / self.channels, i % self.channels))
            .collect()
    }

    /// Dense copy as reals, for feeding the dense network.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_dimensions() {
        assert!(SpikeTrain::silent(0, 3).is_err());
        assert!(SpikeTrain::silent(3, 0).is_err());
    }

    #[test]
    fn rejects_non_binary_entries() {
        assert!(SpikeTrain::from_dense(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn events_roundtrip_through_dense() {
        let t = SpikeTrain::from_events(4, 3, [(0, 2), (3, 0), (1, 1), (1, 1)]).unwrap();
        assert_eq!(t.count(), 3);
        assert_eq!(t.events(), vec![(0, 2), (1, 1), (3, 0)]);
        let back = SpikeTrain::from_events(4, 3, t.events()).unwrap();
        assert_eq!(back, t);
    }
}
