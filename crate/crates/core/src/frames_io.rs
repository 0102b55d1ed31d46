//! Frame sequences, snapshot pairs and on-disk formats.
//!
//! Frames are flattened row-major (pixel `(r, c)` goes to index
//! `r * width + c`) and stored as the columns of an `n x m` matrix of `f64`
//! intensities. Two formats are read:
//!
//! * a directory of binary PGM (`P5`, maxval 255) files, ordered by file name;
//! * the `raw_matrix` container: little-endian, magic `CDMD`, `u32` version 1,
//!   `u32` width, `u32` height, `u32` frame count, `f64` frame interval, then
//!   `n * m` `f64` values column-major (one frame after another).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{CdmdError, Result};
use crate::pipeline::ForegroundMask;
use crate::scalar::Scalar;

const RAW_MAGIC: &[u8; 4] = b"CDMD";
const RAW_VERSION: u32 = 1;
const RAW_HEADER_LEN: usize = 4 + 4 * 4 + 8;

/// A grayscale video as an `n x m` matrix, one flattened frame per column.
#[derive(Clone, Debug)]
pub struct FrameSequence {
    pixels: Mat<f64>,
    width: usize,
    height: usize,
    frame_interval: f64,
}

impl FrameSequence {
    /// Validated constructor: `n = width * height`, at least two frames, and
    /// every intensity finite and inside `[0, 255]`.
    pub fn new(pixels: Mat<f64>, width: usize, height: usize, frame_interval: f64) -> Result<Self> {
        let seq = Self::new_unbounded(pixels, width, height, frame_interval)?;
        let p = &seq.pixels;
        for j in 0..p.ncols() {
            if p.col_as_slice(j).iter().any(|&x| !(0.0..=255.0).contains(&x)) {
                return Err(CdmdError::InvalidArgument(format!(
                    "frame {j} has intensities outside [0, 255]"
                )));
            }
        }
        Ok(seq)
    }

    /// Like [`FrameSequence::new`] but without the 8-bit intensity range
    /// check. Used for synthetic matrices (planted spectra) and `raw_matrix`
    /// files, which can carry arbitrary finite values.
    pub fn new_unbounded(pixels: Mat<f64>, width: usize, height: usize, frame_interval: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CdmdError::InvalidArgument("frame width and height must be positive".into()));
        }
        if pixels.nrows() != width * height {
            return Err(CdmdError::Shape(format!(
                "{} pixel rows for a {width}x{height} frame",
                pixels.nrows()
            )));
        }
        if pixels.ncols() < 2 {
            return Err(CdmdError::InvalidArgument(format!(
                "need at least 2 frames, got {}",
                pixels.ncols()
            )));
        }
        if !(frame_interval.is_finite() && frame_interval > 0.0) {
            return Err(CdmdError::InvalidArgument(format!(
                "frame interval must be positive, got {frame_interval}"
            )));
        }
        for j in 0..pixels.ncols() {
            if pixels.col_as_slice(j).iter().any(|x| !x.is_finite()) {
                return Err(CdmdError::NonFinite("frame pixels"));
            }
        }
        Ok(Self { pixels, width, height, frame_interval })
    }

    pub fn pixels(&self) -> MatRef<'_, f64> {
        self.pixels.as_ref()
    }

    pub fn into_pixels(self) -> Mat<f64> {
        self.pixels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }

    pub fn with_frame_interval(mut self, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(CdmdError::InvalidArgument(format!("frame interval must be positive, got {dt}")));
        }
        self.frame_interval = dt;
        Ok(self)
    }

    /// Frame `t` (0-based) as a flat slice.
    pub fn frame(&self, t: usize) -> &[f64] {
        self.pixels.col_as_slice(t)
    }

    /// Frames `start..start + count` as a new sequence.
    pub fn slice(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.n_frames() {
            return Err(CdmdError::Shape(format!(
                "frames {start}..{} out of {}",
                start + count,
                self.n_frames()
            )));
        }
        Self::new_unbounded(
            self.pixels.as_ref().subcols(start, count).to_owned(),
            self.width,
            self.height,
            self.frame_interval,
        )
    }
}

#[derive(Clone, Debug)]
enum Storage<T> {
    /// One matrix `D` with `left = D[:, 0..m-1]` and `right = D[:, 1..m]`.
    Shifted(Mat<T>),
    Separate { left: Mat<T>, right: Mat<T> },
}

/// Left/right time-shifted snapshot matrices `X, X'` (or their sketches
/// `Y, Y'` when `compressed`).
#[derive(Clone, Debug)]
pub struct SnapshotPair<T = f64> {
    storage: Storage<T>,
    compressed: bool,
    frame_interval: f64,
}

impl<T: Scalar> SnapshotPair<T> {
    /// Overlapping pair from a full sequence matrix `D` (at least 2 columns).
    pub fn shifted(data: Mat<T>, compressed: bool, frame_interval: f64) -> Result<Self> {
        if data.ncols() < 2 {
            return Err(CdmdError::InvalidArgument(format!(
                "need at least 2 snapshots, got {}",
                data.ncols()
            )));
        }
        Ok(Self { storage: Storage::Shifted(data), compressed, frame_interval })
    }

    /// Pair from independent left and right matrices of equal shape.
    pub fn from_parts(left: Mat<T>, right: Mat<T>, compressed: bool, frame_interval: f64) -> Result<Self> {
        if left.shape() != right.shape() {
            return Err(CdmdError::Shape(format!(
                "left {:?} and right {:?} snapshot matrices differ",
                left.shape(),
                right.shape()
            )));
        }
        if left.ncols() == 0 || left.nrows() == 0 {
            return Err(CdmdError::Shape("empty snapshot matrices".into()));
        }
        Ok(Self { storage: Storage::Separate { left, right }, compressed, frame_interval })
    }

    pub fn left(&self) -> MatRef<'_, T> {
        match &self.storage {
            Storage::Shifted(d) => d.as_ref().subcols(0, d.ncols() - 1),
            Storage::Separate { left, .. } => left.as_ref(),
        }
    }

    pub fn right(&self) -> MatRef<'_, T> {
        match &self.storage {
            Storage::Shifted(d) => d.as_ref().subcols(1, d.ncols() - 1),
            Storage::Separate { right, .. } => right.as_ref(),
        }
    }

    /// The underlying sequence matrix when the pair overlaps by construction.
    pub fn sequence(&self) -> Option<MatRef<'_, T>> {
        match &self.storage {
            Storage::Shifted(d) => Some(d.as_ref()),
            Storage::Separate { .. } => None,
        }
    }

    pub fn is_compressed(&self) -> bool {
        self.compressed
    }

    pub fn n_rows(&self) -> usize {
        self.left().nrows()
    }

    /// Number of snapshot columns, `m - 1` for a sequence of `m` frames.
    pub fn n_snapshots(&self) -> usize {
        self.left().ncols()
    }

    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }
}

/// Splits `m` frames into `X = [x_1..x_{m-1}]` and `X' = [x_2..x_m]`.
pub fn split_snapshots(frames: &FrameSequence) -> Result<SnapshotPair<f64>> {
    SnapshotPair::shifted(frames.pixels.clone(), false, frames.frame_interval)
}

/// Consuming variant of [`split_snapshots`] that reuses the pixel buffer.
pub fn into_snapshots(frames: FrameSequence) -> Result<SnapshotPair<f64>> {
    let dt = frames.frame_interval;
    SnapshotPair::shifted(frames.pixels, false, dt)
}

/// Consecutive non-overlapping batches of `batch_size` frames. A final
/// remainder of one frame is merged into the previous batch; a shorter input
/// becomes a single batch.
pub fn batch(frames: &FrameSequence, batch_size: usize) -> Result<Vec<FrameSequence>> {
    if batch_size < 2 {
        return Err(CdmdError::InvalidArgument(format!("batch size must be at least 2, got {batch_size}")));
    }
    let m = frames.n_frames();
    let mut bounds = Vec::new();
    let mut start = 0;
    while start < m {
        let len = batch_size.min(m - start);
        bounds.push((start, len));
        start += len;
    }
    if bounds.len() > 1 {
        let (_, last_len) = *bounds.last().unwrap();
        if last_len < 2 {
            bounds.pop();
            bounds.last_mut().unwrap().1 += last_len;
        }
    }
    bounds.into_iter().map(|(s, len)| frames.slice(s, len)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    PgmDir,
    RawMatrix,
}

impl FromStr for FrameFormat {
    type Err = CdmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm_dir" | "pgm" => Ok(FrameFormat::PgmDir),
            "raw" | "raw_matrix" => Ok(FrameFormat::RawMatrix),
            other => Err(CdmdError::InvalidArgument(format!("unknown frame format `{other}`"))),
        }
    }
}

pub fn load_frames(path: &Path, format: FrameFormat) -> Result<FrameSequence> {
    if !path.exists() {
        return Err(CdmdError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")));
    }
    match format {
        FrameFormat::PgmDir => load_pgm_dir(path),
        FrameFormat::RawMatrix => load_raw(path),
    }
}

/// PGM files in a directory, sorted by file name.
pub fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CdmdError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    Ok(files)
}

fn load_pgm_dir(dir: &Path) -> Result<FrameSequence> {
    let files = pgm_files(dir)?;
    if files.len() < 2 {
        return Err(CdmdError::format(dir, format!("need at least 2 PGM frames, found {}", files.len())));
    }
    let (width, height, first) = read_pgm(&files[0])?;
    let n = width * height;
    let mut pixels = Mat::<f64>::zeros(n, files.len());
    for (t, file) in files.iter().enumerate() {
        let (w, h, data) = if t == 0 { (width, height, first.clone()) } else { read_pgm(file)? };
        if (w, h) != (width, height) {
            return Err(CdmdError::format(
                file,
                format!("frame is {w}x{h}, expected {width}x{height}"),
            ));
        }
        for (dst, &src) in pixels.col_as_slice_mut(t).iter_mut().zip(&data) {
            *dst = src as f64;
        }
    }
    FrameSequence::new(pixels, width, height, 1.0)
}

/// Reads a binary (`P5`) 8-bit PGM, returning `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| CdmdError::io(path, e))?;
    parse_pgm(&bytes).map_err(|reason| CdmdError::format(path, reason))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    let magic = next_token(bytes, &mut pos).ok_or("empty file")?;
    match magic {
        b"P5" => {}
        b"P2" => return Err("ASCII (P2) PGM is not supported; expected binary P5".into()),
        b"P3" | b"P6" => return Err("color PPM image; expected grayscale P5".into()),
        _ => return Err("not a binary PGM (missing P5 magic)".into()),
    }
    for field in fields.iter_mut() {
        let tok = next_token(bytes, &mut pos).ok_or("truncated header")?;
        *field = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad header field `{}`", String::from_utf8_lossy(tok)))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported; expected 255"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let len = width * height;
    if bytes.len() < pos + len {
        return Err(format!("truncated raster: {} of {len} bytes", bytes.len().saturating_sub(pos)));
    }
    Ok((width, height, bytes[pos..pos + len].to_vec()))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height {
        return Err(CdmdError::Shape(format!(
            "{} pixels for a {width}x{height} image",
            data.len()
        )));
    }
    let file = fs::File::create(path).map_err(|e| CdmdError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{width} {height}\n255\n")
        .and_then(|_| w.write_all(data))
        .and_then(|_| w.flush())
        .map_err(|e| CdmdError::io(path, e))
}

/// Writes a real frame as PGM after clamping to `[0, 255]` and rounding half
/// to even.
pub fn save_frame(frame: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    let data: Vec<u8> = frame.iter().map(|&x| to_gray(x)).collect();
    write_pgm(path, width, height, &data)
}

pub(crate) fn to_gray(x: f64) -> u8 {
    if x.is_nan() {
        return 0;
    }
    x.clamp(0.0, 255.0).round_ties_even() as u8
}

/// Writes one frame of a mask as PGM: 255 foreground, 0 background.
pub fn save_mask_frame(bits: &[u8], width: usize, height: usize, path: &Path) -> Result<()> {
    let data: Vec<u8> = bits.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect();
    write_pgm(path, width, height, &data)
}

/// Writes every frame of `mask` into `dir` as `mask_00000.pgm`, ...
pub fn save_mask(mask: &ForegroundMask, width: usize, height: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    if mask.n_pixels() != width * height {
        return Err(CdmdError::Shape(format!(
            "mask has {} pixels per frame, expected {width}x{height}",
            mask.n_pixels()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| CdmdError::io(dir, e))?;
    (0..mask.n_frames())
        .map(|t| {
            let path = dir.join(format!("mask_{t:05}.pgm"));
            save_mask_frame(mask.frame(t), width, height, &path).map(|_| path)
        })
        .collect()
}

/// Reads a directory of mask PGMs (any nonzero pixel is foreground), in
/// file-name order. Returns the mask plus frame width and height.
pub fn load_mask(dir: &Path) -> Result<(ForegroundMask, usize, usize)> {
    let files = pgm_files(dir)?;
    if files.is_empty() {
        return Err(CdmdError::format(dir, "no PGM mask files"));
    }
    let mut dims = None;
    let mut bits = Vec::new();
    for file in &files {
        let (w, h, data) = read_pgm(file)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(CdmdError::format(file, format!("mask is {w}x{h}, expected {}x{}", d.0, d.1)))
            }
            _ => {}
        }
        bits.extend(data.iter().map(|&v| u8::from(v != 0)));
    }
    let (w, h) = dims.unwrap();
    Ok((ForegroundMask::from_bits(bits, w * h, files.len(), 0.0)?, w, h))
}

/// Writes `frames` in the `raw_matrix` format.
pub fn save_frames(frames: &FrameSequence, path: &Path) -> Result<()> {
    save_raw_matrix(frames.pixels(), frames.width, frames.height, frames.frame_interval, path)
}

/// Writes any `(width * height) x m` matrix in the `raw_matrix` format, for
/// example mode dumps. Files with fewer than 2 columns cannot be loaded back
/// as a frame sequence.
pub fn save_raw_matrix(pixels: MatRef<'_, f64>, width: usize, height: usize, frame_interval: f64, path: &Path) -> Result<()> {
    if pixels.nrows() != width * height {
        return Err(CdmdError::Shape(format!("{} rows for a {width}x{height} frame", pixels.nrows())));
    }
    let file = fs::File::create(path).map_err(|e| CdmdError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(RAW_HEADER_LEN);
    header.extend_from_slice(RAW_MAGIC);
    header.extend_from_slice(&RAW_VERSION.to_le_bytes());
    for v in [width, height, pixels.ncols()] {
        let v = u32::try_from(v).map_err(|_| CdmdError::InvalidArgument(format!("dimension {v} exceeds u32")))?;
        header.extend_from_slice(&v.to_le_bytes());
    }
    header.extend_from_slice(&frame_interval.to_le_bytes());
    let io = |e| CdmdError::io(path, e);
    w.write_all(&header).map_err(io)?;
    let mut buf = Vec::with_capacity(pixels.nrows() * 8);
    for t in 0..pixels.ncols() {
        buf.clear();
        for i in 0..pixels.nrows() {
            buf.extend_from_slice(&pixels[(i, t)].to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn load_raw(path: &Path) -> Result<FrameSequence> {
    let bytes = fs::read(path).map_err(|e| CdmdError::io(path, e))?;
    if bytes.len() < RAW_HEADER_LEN {
        return Err(CdmdError::format(path, "truncated raw_matrix header"));
    }
    if &bytes[0..4] != RAW_MAGIC {
        return Err(CdmdError::format(path, "bad magic; expected CDMD"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != RAW_VERSION {
        return Err(CdmdError::format(path, format!("unsupported raw_matrix version {version}")));
    }
    let (width, height, m) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    let dt = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let n = width * height;
    let expected = RAW_HEADER_LEN + n * m * 8;
    if bytes.len() != expected {
        return Err(CdmdError::format(
            path,
            format!("payload is {} bytes, expected {}", bytes.len() - RAW_HEADER_LEN, expected - RAW_HEADER_LEN),
        ));
    }
    let mut pixels = Mat::<f64>::zeros(n, m);
    let payload = &bytes[RAW_HEADER_LEN..];
    for t in 0..m {
        let col = pixels.col_as_slice_mut(t);
        for (i, x) in col.iter_mut().enumerate() {
            let o = (t * n + i) * 8;
            *x = f64::from_le_bytes(payload[o..o + 8].try_into().unwrap());
        }
    }
    FrameSequence::new_unbounded(pixels, width, height, dt).map_err(|e| match e {
        CdmdError::InvalidArgument(r) | CdmdError::Shape(r) => CdmdError::format(path, r),
        other => other,
    })
}
