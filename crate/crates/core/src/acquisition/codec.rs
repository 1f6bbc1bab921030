//! Frame codec.
//!
//! Every frame is `"EEGS" | kind: u8 | payload_len: u32 LE | payload`.
//!
//! | kind | payload |
//! |------|---------|
//! | 0 header  | major u16, minor u16, channel_count u16, rate f64, then per channel: len u8 + UTF-8 label |
//! | 1 samples | first_sample_index u64, count u32, count × channel_count f32 (sample-major) |
//! | 2 marker  | sample_index u64, image_id u8, run u32, session u32, is_target u8 (0, 1, 255 = unknown) |
//! | 3 end     | total_samples u64 |
//!
//! All integers and floats are little-endian.

use crate::error::{Error, Result};
use crate::record::StimulusEvent;

pub const MAGIC: [u8; 4] = *b"EEGS";
pub const FRAME_HEADER_LEN: usize = 9;
pub const VERSION_MAJOR: u16 = 1;
pub const VERSION_MINOR: u16 = 0;
/// Payloads larger than this are rejected as corrupt.
pub const MAX_PAYLOAD: usize = 64 << 20;

const KIND_HEADER: u8 = 0;
const KIND_SAMPLES: u8 = 1;
const KIND_MARKER: u8 = 2;
const KIND_END: u8 = 3;

const TARGET_UNKNOWN: u8 = 255;

#[derive(Debug, Clone, PartialEq)]
pub struct StreamHeader {
    pub version_major: u16,
    pub version_minor: u16,
    pub rate: f64,
    pub channels: Vec<String>,
}

impl StreamHeader {
    pub fn new(rate: f64, channels: Vec<String>) -> Self {
        Self {
            version_major: VERSION_MAJOR,
            version_minor: VERSION_MINOR,
            rate,
            channels,
        }
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireFrame {
    Header(StreamHeader),
    /// `values` holds `count × channel_count` samples, one full channel
    /// vector per time step.
    Samples {
        first_sample_index: u64,
        channel_count: usize,
        values: Vec<f32>,
    },
    Marker(StimulusEvent),
    End {
        total_samples: u64,
    },
}

impl WireFrame {
    fn kind(&self) -> u8 {
        match self {
            WireFrame::Header(_) => KIND_HEADER,
            WireFrame::Samples { .. } => KIND_SAMPLES,
            WireFrame::Marker(_) => KIND_MARKER,
            WireFrame::End { .. } => KIND_END,
        }
    }

    /// Number of time steps in a sample frame.
    pub fn sample_count(&self) -> usize {
        match self {
            WireFrame::Samples {
                channel_count, values, ..
            } if *channel_count > 0 => values.len() / channel_count,
            _ => 0,
        }
    }
}

pub fn encode_frame(frame: &WireFrame) -> Vec<u8> {
    let mut payload = Vec::new();
    match frame {
        WireFrame::Header(h) => {
            payload.extend_from_slice(&h.version_major.to_le_bytes());
            payload.extend_from_slice(&h.version_minor.to_le_bytes());
            payload.extend_from_slice(&(h.channels.len() as u16).to_le_bytes());
            payload.extend_from_slice(&h.rate.to_le_bytes());
            for label in &h.channels {
                let bytes = label.as_bytes();
                payload.push(bytes.len() as u8);
                payload.extend_from_slice(bytes);
            }
        }
        WireFrame::Samples {
            first_sample_index,
            channel_count,
            values,
        } => {
            let count = if *channel_count == 0 {
                0
            } else {
                values.len() / channel_count
            };
            payload.reserve(12 + 4 * values.len());
            payload.extend_from_slice(&first_sample_index.to_le_bytes());
            payload.extend_from_slice(&(count as u32).to_le_bytes());
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        WireFrame::Marker(ev) => {
            payload.extend_from_slice(&(ev.onset_sample as u64).to_le_bytes());
            payload.push(ev.image_id);
            payload.extend_from_slice(&ev.run_index.to_le_bytes());
            payload.extend_from_slice(&ev.session_index.to_le_bytes());
            payload.push(match ev.is_target {
                Some(false) => 0,
                Some(true) => 1,
                None => TARGET_UNKNOWN,
            });
        }
        WireFrame::End { total_samples } => {
            payload.extend_from_slice(&total_samples.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(frame.kind());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Protocol("payload shorter than its fields".into()))?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Protocol(format!(
                "{} trailing payload bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Decodes one frame from the front of `bytes`, returning it with the
/// number of bytes consumed. [`Error::Incomplete`] means more input is
/// needed and nothing was consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(WireFrame, usize)> {
    let magic_seen = bytes.len().min(MAGIC.len());
    if bytes[..magic_seen] != MAGIC[..magic_seen] {
        return Err(Error::Protocol("bad frame magic".into()));
    }
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(Error::Incomplete {
            needed: FRAME_HEADER_LEN - bytes.len(),
        });
    }
    let kind = bytes[4];
    if kind > KIND_END {
        return Err(Error::Protocol(format!("unknown frame kind {kind}")));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("payload length {len} exceeds limit")));
    }
    let total = FRAME_HEADER_LEN + len;
    if bytes.len() < total {
        return Err(Error::Incomplete {
            needed: total - bytes.len(),
        });
    }
    let mut r = Reader {
        bytes: &bytes[FRAME_HEADER_LEN..total],
        pos: 0,
    };
    let frame = match kind {
        KIND_HEADER => {
            let version_major = r.u16()?;
            let version_minor = r.u16()?;
            let count = r.u16()? as usize;
            let rate = f64::from_le_bytes(r.take()?);
            let mut channels = Vec::with_capacity(count);
            for _ in 0..count {
                let n = r.u8()? as usize;
                let end = r.pos + n;
                let raw = r
                    .bytes
                    .get(r.pos..end)
                    .ok_or_else(|| Error::Protocol("truncated channel label".into()))?;
                let label =
                    std::str::from_utf8(raw).map_err(|_| Error::Protocol("channel label is not UTF-8".into()))?;
                channels.push(label.to_string());
                r.pos = end;
            }
            WireFrame::Header(StreamHeader {
                version_major,
                version_minor,
                rate,
                channels,
            })
        }
        KIND_SAMPLES => {
            let first_sample_index = r.u64()?;
            let count = r.u32()? as usize;
            let rest = len - 12;
            if !rest.is_multiple_of(4) {
                return Err(Error::Protocol("sample payload not a whole number of f32".into()));
            }
            let n_values = rest / 4;
            if count == 0 || !n_values.is_multiple_of(count) {
                return Err(Error::Protocol(format!(
                    "{n_values} values do not split into {count} samples"
                )));
            }
            let values = r.bytes[r.pos..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            r.pos = r.bytes.len();
            WireFrame::Samples {
                first_sample_index,
                channel_count: n_values / count,
                values,
            }
        }
        KIND_MARKER => {
            let onset = r.u64()?;
            let image_id = r.u8()?;
            let run_index = r.u32()?;
            let session_index = r.u32()?;
            let is_target = match r.u8()? {
                0 => Some(false),
                1 => Some(true),
                TARGET_UNKNOWN => None,
                other => return Err(Error::Protocol(format!("invalid target flag {other}"))),
            };
            WireFrame::Marker(StimulusEvent {
                image_id,
                onset_sample: usize::try_from(onset).map_err(|_| Error::Protocol("marker index overflows".into()))?,
                run_index,
                session_index,
                is_target,
            })
        }
        _ => WireFrame::End {
            total_samples: r.u64()?,
        },
    };
    r.finish()?;
    Ok((frame, total))
}

/// Incremental decoder accepting arbitrary chunk boundaries.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buffer: Vec<u8>,
    start: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start == self.buffer.len() {
            self.buffer.clear();
            self.start = 0;
        }
        self.buffer.extend_from_slice(bytes);
    }

    /// Next complete frame, or `None` if more bytes are needed.
    pub fn next_frame(&mut self) -> Result<Option<WireFrame>> {
        match decode_frame(&self.buffer[self.start..]) {
            Ok((frame, used)) => {
                self.start += used;
                if self.start > 1 << 16 {
                    self.buffer.drain(..self.start);
                    self.start = 0;
                }
                Ok(Some(frame))
            }
            Err(Error::Incomplete { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Bytes received but not yet decoded.
    pub fn pending(&self) -> usize {
        self.buffer.len() - self.start
    }
}
