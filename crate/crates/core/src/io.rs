//! File formats: headered matrix files (binary and CSV), WAV input and the
//! JSON run configuration.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AadError, Result};
use crate::pipeline::{Estimator, ProtocolConfig};
use crate::preprocess::{Sampled, Waveform};
use crate::synth::SceneConfig;

pub const MATRIX_MAGIC: [u8; 8] = *b"AADMAT01";
/// numpy-style dtype tag for little-endian float64.
pub const MATRIX_DTYPE: [u8; 4] = *b"<f8\0";
const CSV_PREAMBLE: &str = "# aad-matrix rate_hz=";

/// A dense sample-by-channel matrix with named columns.
///
/// Binary layout, all integers little-endian:
///
/// ```text
/// magic  [u8; 8]   "AADMAT01"
/// dtype  [u8; 4]   "<f8\0"
/// rows   u64
/// cols   u64
/// rate   f64
/// names  cols x (u32 byte length, UTF-8 bytes)
/// data   rows x cols f64, row-major
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    rate_hz: f64,
    channels: Vec<String>,
    rows: usize,
    data: Vec<f64>,
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains([',', '\n', '\r']) {
        return Err(AadError::InvalidInput(format!(
            "channel name {name:?} must be non-empty and free of commas and newlines"
        )));
    }
    Ok(())
}

impl MatrixFile {
    pub fn new(rate_hz: f64, channels: Vec<String>, rows: usize, data: Vec<f64>) -> Result<Self> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(AadError::InvalidInput(format!("rate_hz must be positive, got {rate_hz}")));
        }
        if channels.is_empty() {
            return Err(AadError::InvalidInput("matrix needs at least one channel".into()));
        }
        channels.iter().try_for_each(|c| check_name(c))?;
        if data.len() != rows * channels.len() {
            return Err(AadError::Dimension(format!(
                "{} values for {rows} rows x {} columns",
                data.len(),
                channels.len()
            )));
        }
        Ok(Self {
            rate_hz,
            channels,
            rows,
            data,
        })
    }

    /// Builds a matrix from equally long named columns.
    pub fn from_columns(rate_hz: f64, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let rows = columns.first().map_or(0, |(_, c)| c.len());
        if let Some((name, c)) = columns.iter().find(|(_, c)| c.len() != rows) {
            return Err(AadError::Dimension(format!(
                "channel {name} has {} samples, expected {rows}",
                c.len()
            )));
        }
        let cols = columns.len();
        let mut data = vec![0.0; rows * cols];
        for (j, (_, c)) in columns.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                data[i * cols + j] = *v;
            }
        }
        Self::new(rate_hz, columns.into_iter().map(|(n, _)| n).collect(), rows, data)
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    /// Row-major payload.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn column_at(&self, j: usize) -> Vec<f64> {
        self.data.iter().skip(j).step_by(self.cols()).copied().collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.column_index(name).map(|j| self.column_at(j))
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&MATRIX_MAGIC)?;
        w.write_all(&MATRIX_DTYPE)?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols() as u64).to_le_bytes())?;
        w.write_all(&self.rate_hz.to_le_bytes())?;
        for name in &self.channels {
            let len = u32::try_from(name.len())
                .map_err(|_| AadError::InvalidInput(format!("channel name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        fn take<const K: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; K]> {
            let mut buf = [0u8; K];
            r.read_exact(&mut buf)
                .map_err(|_| AadError::Format(format!("truncated header: missing {what}")))?;
            Ok(buf)
        }
        if take::<8, _>(&mut r, "magic")? != MATRIX_MAGIC {
            return Err(AadError::Format("not a matrix file (bad magic)".into()));
        }
        let dtype = take::<4, _>(&mut r, "dtype")?;
        if dtype != MATRIX_DTYPE {
            return Err(AadError::Format(format!(
                "unsupported dtype {:?}, expected little-endian float64",
                String::from_utf8_lossy(&dtype)
            )));
        }
        let rows = u64::from_le_bytes(take(&mut r, "rows")?);
        let cols = u64::from_le_bytes(take(&mut r, "cols")?);
        let rate_hz = f64::from_le_bytes(take(&mut r, "rate")?);
        let mut channels = Vec::new();
        for j in 0..cols {
            let len = u32::from_le_bytes(take(&mut r, "channel name length")?) as usize;
            let mut bytes = Vec::new();
            (&mut r).take(len as u64).read_to_end(&mut bytes)?;
            if bytes.len() != len {
                return Err(AadError::Format(format!("truncated name of channel {j}")));
            }
            channels.push(
                String::from_utf8(bytes)
                    .map_err(|_| AadError::Format(format!("channel {j} name is not UTF-8")))?,
            );
        }
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| AadError::Format(format!("{rows} x {cols} matrix is too large")))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() as u64 != expected {
            return Err(AadError::Format(format!(
                "payload has {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::new(rate_hz, channels, rows as usize, data).map_err(|e| AadError::Format(e.to_string()))
    }

    /// CSV text: a `# aad-matrix rate_hz=...` line, a header of channel
    /// names, then one line per row. Values use shortest round-trip
    /// formatting, so reading back is bit-exact.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_PREAMBLE}{}", self.rate_hz)?;
        writeln!(w, "{}", self.channels.join(","))?;
        for row in self.data.chunks_exact(self.cols()) {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| AadError::Format(format!("missing {what} line")))
        };
        let preamble = next("preamble")?;
        let rate_hz: f64 = preamble
            .strip_prefix(CSV_PREAMBLE)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| AadError::Format(format!("bad preamble {preamble:?}")))?;
        let channels: Vec<String> = next("header")?.split(',').map(str::to_owned).collect();
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let before = data.len();
            for field in line.split(',') {
                data.push(field.trim().parse::<f64>().map_err(|_| {
                    AadError::Format(format!("row {i}: cannot parse {field:?} as a number"))
                })?);
            }
            if data.len() - before != channels.len() {
                return Err(AadError::Format(format!(
                    "row {i} has {} fields, header has {}",
                    data.len() - before,
                    channels.len()
                )));
            }
            rows += 1;
        }
        Self::new(rate_hz, channels, rows, data).map_err(|e| AadError::Format(e.to_string()))
    }

    /// Writes CSV when the extension is `.csv`, binary otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        if is_csv(path) {
            self.write_csv(w)
        } else {
            self.write_binary(w)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        if is_csv(path) {
            Self::read_csv(r)
        } else {
            Self::read_binary(r)
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads every channel of a 16-bit integer or 32-bit float PCM WAV file.
pub fn read_wav(path: &Path) -> Result<Vec<Waveform>> {
    let reader = hound::WavReader::open(path).map_err(wav_error)?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_error)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_error)?,
        (fmt, bits) => {
            return Err(AadError::Unsupported(format!(
                "{bits}-bit {fmt:?} WAV; only 16-bit PCM and 32-bit float are read"
            )))
        }
    };
    let k = spec.channels as usize;
    (0..k)
        .map(|c| {
            let samples = interleaved.iter().skip(c).step_by(k).copied().collect();
            Waveform::new(samples, spec.sample_rate as f64)
        })
        .collect()
}

/// Writes a mono 32-bit float WAV; the rate is rounded to whole hertz.
pub fn write_wav(path: &Path, x: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: x.rate_hz().round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_error)?;
    for v in x.samples() {
        w.write_sample(*v as f32).map_err(wav_error)?;
    }
    w.finalize().map_err(wav_error)
}

fn wav_error(e: hound::Error) -> AadError {
    match e {
        hound::Error::IoError(e) => AadError::Io(e),
        other => AadError::Format(format!("wav: {other}")),
    }
}

/// Everything tunable in one JSON document. Missing keys take their
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub protocol: ProtocolConfig,
    pub estimator: Estimator,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            protocol: ProtocolConfig::default(),
            estimator: Estimator::SeqLmmse,
        }
    }
}

impl RunConfig {
    /// Parses without validating.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| AadError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reads, parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every validation problem, one message per section.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.scene.validate() {
            out.push(format!("scene: {}", bare(e)));
        }
        if let Err(e) = self.protocol.validate() {
            out.push(format!("protocol: {}", bare(e)));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.diagnostics() {
            d if d.is_empty() => Ok(()),
            d => Err(AadError::Config(d.join("; "))),
        }
    }
}

fn bare(e: AadError) -> String {
    match e {
        AadError::Config(m) => m,
        other => other.to_string(),
    }
}
