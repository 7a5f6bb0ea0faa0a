//! `MARC` video chunk files.
//!
//! Layout, all little-endian:
//!
//! | field   | type                   |
//! |---------|------------------------|
//! | magic   | `b"MARC"`              |
//! | version | u32 (= 1)              |
//! | T,H,W,C | 4 x u32                |
//! | fs      | f32                    |
//! | frames  | T*H*W*C x f32, row-major `(T,H,W,C)` |
//! | ppg     | T x f32                |
//! | crc     | u32 CRC-32 of every preceding byte |

use std::path::Path;

use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"MARC";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 16 + 4;
/// Refuse headers that would imply more than this many samples.
const MAX_SAMPLES: u64 = 1 << 32;

/// A block of frames with its aligned ground-truth pulse trace.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoChunk {
    /// Shape `(T, H, W, C)`, values in `[0, 1]`.
    pub frames: Tensor,
    /// Ground-truth PPG, length `T`.
    pub ppg: Vec<f64>,
    pub fs: f64,
    pub source_id: String,
}

impl VideoChunk {
    pub fn new(frames: Tensor, ppg: Vec<f64>, fs: f64, source_id: impl Into<String>) -> Result<Self> {
        let c = VideoChunk {
            frames,
            ppg,
            fs,
            source_id: source_id.into(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.ppg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ppg.is_empty()
    }

    /// `[T, H, W, C]`.
    pub fn dims(&self) -> [usize; 4] {
        let s = self.frames.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.rank() != 4 {
            return Err(Error::shape("video_chunk", format!("frames must be (T,H,W,C), got {:?}", self.frames.shape())));
        }
        if self.frames.shape()[0] != self.ppg.len() {
            return Err(Error::shape(
                "video_chunk",
                format!("{} frames vs {} ppg samples", self.frames.shape()[0], self.ppg.len()),
            ));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {}", self.fs)));
        }
        if self.frames.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("frame values must lie in [0, 1]"));
        }
        if self.ppg.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ppg contains non-finite samples"));
        }
        Ok(())
    }
}

/// Serialises a chunk. Values are stored as f32.
pub fn encode_chunk(chunk: &VideoChunk) -> Vec<u8> {
    let [t, h, w, c] = chunk.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * (chunk.frames.numel() + t) + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [t, h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(chunk.fs as f32).to_le_bytes());
    for &v in chunk.frames.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in &chunk.ppg {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Header fields of a `MARC` file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkHeader {
    pub dims: [usize; 4],
    pub fs: f64,
}

fn parse_header(r: &mut Reader<'_>) -> Result<ChunkHeader> {
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "not a MARC file".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return r.fail(format!("unsupported MARC version {version}"));
    }
    let mut dims = [0usize; 4];
    for (d, name) in dims.iter_mut().zip(["T", "H", "W", "C"]) {
        let v = r.u32(name)?;
        if v == 0 {
            return r.fail(format!("dimension {name} is zero"));
        }
        *d = v as usize;
    }
    let total = dims.iter().map(|&d| d as u64).product::<u64>();
    if total > MAX_SAMPLES {
        return r.fail(format!("implausible dimensions {dims:?}"));
    }
    let fs = r.f32("fs")?;
    if !(fs.is_finite() && fs > 0.0) {
        return r.fail(format!("invalid sampling rate {fs}"));
    }
    Ok(ChunkHeader { dims, fs: fs as f64 })
}

pub fn decode_chunk(bytes: &[u8], source_id: &str) -> Result<VideoChunk> {
    let mut r = Reader::new(bytes);
    let header = parse_header(&mut r)?;
    let [t, h, w, c] = header.dims;
    let expected = HEADER_LEN as u64 + 4 * (t as u64 * h as u64 * w as u64 * c as u64 + t as u64) + 4;
    if bytes.len() as u64 != expected {
        return Err(Error::Parse {
            offset: bytes.len().min(expected as usize) as u64,
            message: format!("file is {} bytes, header implies {expected}", bytes.len()),
        });
    }
    let payload_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[payload_end..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[..payload_end]) != stored {
        return Err(Error::Parse {
            offset: payload_end as u64,
            message: "checksum mismatch".into(),
        });
    }
    let frames_start = r.offset();
    let frames = r.f32_vec(t * h * w * c, "frames")?;
    if let Some(i) = frames.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Parse {
            offset: frames_start + 4 * i as u64,
            message: "frame value outside [0, 1]".into(),
        });
    }
    let ppg_start = r.offset();
    let ppg = r.f32_vec(t, "ppg")?;
    if let Some(i) = ppg.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parse {
            offset: ppg_start + 4 * i as u64,
            message: "non-finite ppg sample".into(),
        });
    }
    Ok(VideoChunk {
        frames: Tensor::new(&[t, h, w, c], frames.into_iter().map(f64::from).collect())?,
        ppg: ppg.into_iter().map(f64::from).collect(),
        fs: header.fs,
        source_id: source_id.to_string(),
    })
}

pub fn write_chunk(path: &Path, chunk: &VideoChunk) -> Result<()> {
    chunk.validate()?;
    std::fs::write(path, encode_chunk(chunk)).map_err(|e| Error::file(path, e))
}

/// Reads a chunk; its `source_id` is derived from the file name
/// (see [`source_of_path`]).
pub fn read_chunk(path: &Path) -> Result<VideoChunk> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    let (source, _) = source_of_path(path);
    decode_chunk(&bytes, &source)
}

/// Reads only the header of a chunk file.
pub fn read_header(path: &Path) -> Result<ChunkHeader> {
    use std::io::Read;
    let mut buf = [0u8; HEADER_LEN];
    let mut f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let n = f.read(&mut buf).map_err(|e| Error::file(path, e))?;
    parse_header(&mut Reader::new(&buf[..n]))
}

/// Source clip id and chunk index encoded in a file name of the form
/// `<source>_c<index>.marc`; other names map to `(stem, 0)`.
pub fn source_of_path(path: &Path) -> (String, usize) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    if let Some((prefix, idx)) = stem.rsplit_once("_c") {
        if let Ok(i) = idx.parse::<usize>() {
            if !prefix.is_empty() {
                return (prefix.to_string(), i);
            }
        }
    }
    (stem.to_string(), 0)
}

pub fn chunk_file_name(source: &str, index: usize) -> String {
    format!("{source}_c{index:02}.marc")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> VideoChunk {
        let frames = Tensor::new(&[2, 2, 3, 1], (0..12).map(|i| i as f64 / 16.0).collect()).unwrap();
        VideoChunk::new(frames, vec![-1.0, 1.0], 30.0, "clip").unwrap()
    }

    #[test]
    fn roundtrip() {
        let c = sample();
        let back = decode_chunk(&encode_chunk(&c), "clip").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn wrong_magic() {
        let mut b = encode_chunk(&sample());
        b[1] = b'Z';
        assert!(decode_chunk(&b, "x").unwrap_err().to_string().contains("not a MARC file"));
    }

    #[test]
    fn truncated_file_errors() {
        let b = encode_chunk(&sample());
        for cut in [0, 3, 10, 27, 28, b.len() - 1] {
            let err = decode_chunk(&b[..cut], "x").unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "{cut}: {err}");
        }
    }

    #[test]
    fn payload_flip_is_caught() {
        let mut b = encode_chunk(&sample());
        b[40] ^= 1;
        assert!(decode_chunk(&b, "x").unwrap_err().to_string().contains("checksum"));
    }

    #[test]
    fn source_parsing() {
        assert_eq!(source_of_path(Path::new("/d/test_0003_c07.marc")), ("test_0003".into(), 7));
        assert_eq!(source_of_path(Path::new("plain.marc")), ("plain".into(), 0));
        assert_eq!(chunk_file_name("train_0001", 2), "train_0001_c02.marc");
    }
}
