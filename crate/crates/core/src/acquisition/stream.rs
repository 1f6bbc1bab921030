//! Record ⇄ frame sequence, and blocking reads/writes over byte streams.

use std::io::{Read, Write};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use super::codec::{encode_frame, FrameDecoder, StreamHeader, WireFrame, VERSION_MAJOR};
use crate::error::{Error, Result};
use crate::record::{ChannelSet, EegRecord, StimulusEvent};

/// Header, then sample frames of `chunk` time steps each with every marker
/// emitted just before the frame containing its sample, then end.
pub fn stream_record(record: &EegRecord, chunk: usize) -> Result<Vec<WireFrame>> {
    let mut frames = Vec::new();
    for_each_frame(record, chunk, |f| {
        frames.push(f);
        Ok(())
    })?;
    Ok(frames)
}

fn for_each_frame(record: &EegRecord, chunk: usize, mut emit: impl FnMut(WireFrame) -> Result<()>) -> Result<()> {
    if chunk == 0 {
        return Err(Error::Config("chunk size must be ≥ 1".into()));
    }
    emit(WireFrame::Header(StreamHeader::new(
        record.rate(),
        record.channels().labels().to_vec(),
    )))?;
    let n = record.n_samples();
    let n_ch = record.n_channels();
    let mut markers = record.markers().iter().peekable();
    let mut start = 0;
    while start < n {
        let count = chunk.min(n - start);
        while let Some(m) = markers.next_if(|m| m.onset_sample < start + count) {
            emit(WireFrame::Marker(*m))?;
        }
        // columns are contiguous channel vectors: sample-major order
        let block = record.samples().columns(start, count);
        let mut values = Vec::with_capacity(count * n_ch);
        for col in block.column_iter() {
            values.extend(col.iter().map(|&v| v as f32));
        }
        emit(WireFrame::Samples {
            first_sample_index: start as u64,
            channel_count: n_ch,
            values,
        })?;
        start += count;
    }
    emit(WireFrame::End {
        total_samples: n as u64,
    })
}

/// Rebuilds records from a validated frame sequence.
#[derive(Debug, Default)]
pub struct RecordAssembler {
    header: Option<StreamHeader>,
    columns: Vec<f64>,
    received: usize,
    markers: Vec<StimulusEvent>,
}

impl RecordAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one frame; returns the finished record when `frame` is the end frame.
    pub fn push(&mut self, frame: WireFrame) -> Result<Option<EegRecord>> {
        match frame {
            WireFrame::Header(h) => {
                if self.header.is_some() {
                    return Err(Error::Protocol("header repeated inside a stream".into()));
                }
                if h.version_major > VERSION_MAJOR {
                    return Err(Error::Version {
                        found_major: h.version_major,
                        found_minor: h.version_minor,
                        supported: VERSION_MAJOR,
                    });
                }
                self.header = Some(h);
                Ok(None)
            }
            WireFrame::Samples {
                first_sample_index,
                channel_count,
                values,
            } => {
                let h = self.require_header("samples")?;
                if channel_count != h.channel_count() {
                    return Err(Error::Protocol(format!(
                        "sample frame has {channel_count} channels, header declared {}",
                        h.channel_count()
                    )));
                }
                if first_sample_index != self.received as u64 {
                    return Err(Error::Protocol(format!(
                        "sample frame starts at {first_sample_index}, expected {}",
                        self.received
                    )));
                }
                self.received += values.len() / channel_count.max(1);
                self.columns.extend(values.into_iter().map(f64::from));
                Ok(None)
            }
            WireFrame::Marker(ev) => {
                self.require_header("marker")?;
                if ev.onset_sample < self.received {
                    return Err(Error::Protocol(format!(
                        "marker for sample {} arrived after its samples",
                        ev.onset_sample
                    )));
                }
                if self.markers.last().is_some_and(|m| m.onset_sample >= ev.onset_sample) {
                    return Err(Error::Protocol("markers out of order".into()));
                }
                self.markers.push(ev);
                Ok(None)
            }
            WireFrame::End { total_samples } => {
                let h = self
                    .header
                    .take()
                    .ok_or_else(|| Error::Protocol("end frame before header".into()))?;
                if total_samples != self.received as u64 {
                    return Err(Error::Protocol(format!(
                        "end frame announces {total_samples} samples, received {}",
                        self.received
                    )));
                }
                let columns = std::mem::take(&mut self.columns);
                let markers = std::mem::take(&mut self.markers);
                let n = self.received;
                self.received = 0;
                let channels = ChannelSet::new(h.channels).map_err(|e| Error::Protocol(e.to_string()))?;
                let samples = DMatrix::from_vec(channels.len(), n, columns);
                EegRecord::new(channels, h.rate, samples, markers)
                    .map(Some)
                    .map_err(|e| Error::Protocol(e.to_string()))
            }
        }
    }

    fn require_header(&self, what: &str) -> Result<&StreamHeader> {
        self.header
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("{what} frame before header")))
    }

    /// True between a header and its end frame.
    pub fn in_progress(&self) -> bool {
        self.header.is_some()
    }
}

/// Reassembles a single record from a complete frame sequence.
pub fn reassemble(frames: impl IntoIterator<Item = WireFrame>) -> Result<EegRecord> {
    let mut asm = RecordAssembler::new();
    let mut frames = frames.into_iter();
    for frame in frames.by_ref() {
        if let Some(record) = asm.push(frame)? {
            if frames.next().is_some() {
                return Err(Error::Protocol("frames after end of stream".into()));
            }
            return Ok(record);
        }
    }
    Err(Error::Protocol("stream ended without an end frame".into()))
}

/// Writes `record` as a frame stream.
pub fn write_record<W: Write>(out: &mut W, record: &EegRecord, chunk: usize) -> Result<()> {
    for_each_frame(record, chunk, |f| out.write_all(&encode_frame(&f)).map_err(Error::from))?;
    out.flush()?;
    Ok(())
}

/// Like [`write_record`], but each sample frame is released only once its
/// last time step would have been recorded, with simulated time running
/// `speed` times faster than the wall clock.
pub fn write_record_paced<W: Write>(out: &mut W, record: &EegRecord, chunk: usize, speed: f64) -> Result<()> {
    if !(speed > 0.0) {
        return Err(Error::Config(format!("pacing speed {speed} must be positive")));
    }
    let start = Instant::now();
    let rate = record.rate();
    for_each_frame(record, chunk, |f| {
        if let WireFrame::Samples { first_sample_index, .. } = &f {
            let ready = (*first_sample_index as f64 + f.sample_count() as f64) / rate / speed;
            if let Some(wait) = Duration::from_secs_f64(ready).checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        out.write_all(&encode_frame(&f))?;
        if matches!(f, WireFrame::Samples { .. }) {
            out.flush()?;
        }
        Ok(())
    })?;
    out.flush()?;
    Ok(())
}

/// Pulls frames from a byte source, one record at a time.
pub struct RecordReader<R> {
    source: R,
    decoder: FrameDecoder,
    assembler: RecordAssembler,
    buf: Vec<u8>,
}

impl<R: Read> RecordReader<R> {
    pub fn new(source: R) -> Self {
        Self {
            source,
            decoder: FrameDecoder::new(),
            assembler: RecordAssembler::new(),
            buf: vec![0; 64 * 1024],
        }
    }

    /// Next complete record; `Ok(None)` on a clean end of input between records.
    pub fn next_record(&mut self) -> Result<Option<EegRecord>> {
        loop {
            while let Some(frame) = self.decoder.next_frame()? {
                if let Some(record) = self.assembler.push(frame)? {
                    return Ok(Some(record));
                }
            }
            let n = loop {
                match self.source.read(&mut self.buf) {
                    Ok(n) => break n,
                    Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                    Err(e) => return Err(e.into()),
                }
            };
            if n == 0 {
                if self.decoder.pending() == 0 && !self.assembler.in_progress() {
                    return Ok(None);
                }
                return Err(Error::Protocol("stream truncated mid-record".into()));
            }
            self.decoder.push(&self.buf[..n]);
        }
    }

    /// Like [`next_record`](Self::next_record) but end of input is an error.
    pub fn expect_record(&mut self) -> Result<EegRecord> {
        self.next_record()?
            .ok_or_else(|| Error::Protocol("stream ended before a record".into()))
    }
}
