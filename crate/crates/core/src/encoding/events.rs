//! Address-event streams: binning into fixed-step spike tensors, the `EVT1`
//! container, N-MNIST ATIS records, and a synthetic generator for tests.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::SpikeTensor;
use crate::error::{Error, Result};

const EVT1_MAGIC: &[u8; 8] = b"SPKEVT01";
const EVT1_HEADER_LEN: usize = 16;
const EVT1_RECORD_LEN: usize = 10;
const ATIS_RECORD_LEN: usize = 5;

/// One DVS event: timestamp in microseconds, pixel address and polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventRecord {
    pub t: u32,
    pub x: u16,
    pub y: u16,
    pub polarity: u8,
}

/// A decoded event file: sensor geometry plus time-ordered events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<EventRecord>,
}

fn check_events(events: &[EventRecord], width: u16, height: u16) -> Result<()> {
    let mut last = 0u32;
    for (index, e) in events.iter().enumerate() {
        if e.t < last {
            return Err(Error::UnsortedEvents { index });
        }
        last = e.t;
        if e.x >= width || e.y >= height {
            return Err(Error::EventOutOfBounds { index, x: e.x, y: e.y, width, height });
        }
        if e.polarity > 1 {
            return Err(Error::BadPolarity { index, polarity: e.polarity });
        }
    }
    Ok(())
}

/// Rasterizes events into `timesteps` equal bins over `[0, duration_us)`.
///
/// Unit index is `polarity * H * W + y * W + x`, so the output has `2 * H * W`
/// units. A cell is 1 if at least one event landed in it.
pub fn bin_events(
    events: &[EventRecord],
    timesteps: usize,
    height: u16,
    width: u16,
    duration_us: u64,
) -> Result<SpikeTensor> {
    if timesteps == 0 {
        return Err(Error::InvalidArgument("timesteps must be at least 1".into()));
    }
    if duration_us == 0 {
        return Err(Error::InvalidArgument("duration must be positive".into()));
    }
    check_events(events, width, height)?;
    let plane = usize::from(height) * usize::from(width);
    let mut out = SpikeTensor::zeros(timesteps, 1, 2 * plane);
    for (index, e) in events.iter().enumerate() {
        let t = u64::from(e.t);
        if t >= duration_us {
            return Err(Error::EventOutOfWindow { index, t, duration_us });
        }
        let bin = (u128::from(t) * timesteps as u128 / u128::from(duration_us)) as usize;
        let unit = usize::from(e.polarity) * plane + usize::from(e.y) * usize::from(width) + usize::from(e.x);
        out.set(bin, 0, unit, true);
    }
    Ok(out)
}

/// Serializes events into the little-endian `EVT1` layout.
pub fn write_event_file(width: u16, height: u16, events: &[EventRecord]) -> Result<Vec<u8>> {
    check_events(events, width, height)?;
    let count = u32::try_from(events.len())
        .map_err(|_| Error::InvalidArgument(format!("{} events exceed u32", events.len())))?;
    let mut out = Vec::with_capacity(EVT1_HEADER_LEN + events.len() * EVT1_RECORD_LEN);
    out.extend_from_slice(EVT1_MAGIC);
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for e in events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity);
        out.push(0);
    }
    Ok(out)
}

pub fn parse_event_file(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < EVT1_MAGIC.len() {
        return Err(Error::Truncated { expected: EVT1_HEADER_LEN, found: bytes.len() });
    }
    if &bytes[..8] != EVT1_MAGIC {
        return Err(Error::BadEventMagic);
    }
    if bytes.len() < EVT1_HEADER_LEN {
        return Err(Error::Truncated { expected: EVT1_HEADER_LEN, found: bytes.len() });
    }
    let width = u16::from_le_bytes([bytes[8], bytes[9]]);
    let height = u16::from_le_bytes([bytes[10], bytes[11]]);
    let count = u32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as usize;
    let body = &bytes[EVT1_HEADER_LEN..];
    if body.len() % EVT1_RECORD_LEN != 0 || body.len() / EVT1_RECORD_LEN != count {
        return Err(Error::EventCountMismatch { header: count, payload: body.len() / EVT1_RECORD_LEN });
    }
    let events = body
        .chunks_exact(EVT1_RECORD_LEN)
        .enumerate()
        .map(|(i, r)| {
            if r[9] != 0 {
                return Err(Error::InvalidArgument(format!("event {i}: nonzero pad byte")));
            }
            Ok(EventRecord {
                t: u32::from_le_bytes([r[0], r[1], r[2], r[3]]),
                x: u16::from_le_bytes([r[4], r[5]]),
                y: u16::from_le_bytes([r[6], r[7]]),
                polarity: r[8],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_events(&events, width, height)?;
    Ok(EventStream { width, height, events })
}

/// Decodes N-MNIST style ATIS records (5 bytes each, big-endian):
/// x, y, then polarity in bit 7 of byte 2 and a 23-bit timestamp.
pub fn parse_atis(bytes: &[u8]) -> Result<Vec<EventRecord>> {
    if bytes.len() % ATIS_RECORD_LEN != 0 {
        let whole = bytes.len() / ATIS_RECORD_LEN;
        return Err(Error::Truncated { expected: (whole + 1) * ATIS_RECORD_LEN, found: bytes.len() });
    }
    Ok(bytes
        .chunks_exact(ATIS_RECORD_LEN)
        .map(|r| EventRecord {
            t: (u32::from(r[2] & 0x7f) << 16) | (u32::from(r[3]) << 8) | u32::from(r[4]),
            x: u16::from(r[0]),
            y: u16::from(r[1]),
            polarity: r[2] >> 7,
        })
        .collect())
}

/// Draws a homogeneous Poisson event stream. `rate_hz` is the expected number
/// of events per second over the whole sensor.
pub fn synth_event_stream<R: Rng + ?Sized>(
    rng: &mut R,
    width: u16,
    height: u16,
    duration_us: u32,
    rate_hz: f64,
) -> Result<Vec<EventRecord>> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("sensor must be non-empty".into()));
    }
    if !rate_hz.is_finite() || rate_hz < 0.0 {
        return Err(Error::InvalidArgument(format!("rate {rate_hz} must be finite and >= 0")));
    }
    let mean = rate_hz * f64::from(duration_us) * 1e-6;
    if mean == 0.0 {
        return Ok(Vec::new());
    }
    let count = Poisson::new(mean).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng) as usize;
    let mut events: Vec<EventRecord> = (0..count)
        .map(|_| EventRecord {
            t: rng.random_range(0..duration_us),
            x: rng.random_range(0..width),
            y: rng.random_range(0..height),
            polarity: rng.random_range(0..=1),
        })
        .collect();
    events.sort_by_key(|e| e.t);
    Ok(events)
}
