//! File formats. All binary integers and floats are little-endian.
//!
//! | magic  | header (u32 each)                               | payload                                    |
//! |--------|-------------------------------------------------|--------------------------------------------|
//! | `RVF1` | width, height, channels, fps_milli, frame_count | frames of row-major 8-bit samples          |
//! | `TKE1` | T, H, W, D                                      | `T*H*W*D` f32, row-major `(t, h, w, d)`    |
//! | `STK1` | record_count, D                                 | records of `t, h, w` (u32) then `D` f32    |
//! | `DMK1` | T, H, W                                         | one byte per cell, 1 = drop, `(t, h, w)`   |
//!
//! The timeline is newline-delimited JSON, one flat object per step with the
//! keys `step, wall_time, drop_ratio, retained, total, trigger`, written in
//! that order. Readers only accept the canonical byte form produced by
//! [`write_timeline`].

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use crate::engine::TimelineEntry;
use crate::error::{Error, Result};
use crate::geometry::{GridGeometry, Position3D};
use crate::redundancy::{ratio_of, DropMask, SlimTokenStream, TokenGrid};

pub const RVF_MAGIC: &[u8; 4] = b"RVF1";
pub const TKE_MAGIC: &[u8; 4] = b"TKE1";
pub const STK_MAGIC: &[u8; 4] = b"STK1";
pub const MASK_MAGIC: &[u8; 4] = b"DMK1";

pub const RVF_HEADER_LEN: usize = 24;
pub const TKE_HEADER_LEN: usize = 20;
pub const STK_HEADER_LEN: usize = 12;
pub const MASK_HEADER_LEN: usize = 16;

/// Frames larger than this are treated as a corrupt header.
const MAX_FRAME_BYTES: u64 = 1 << 30;

fn u32_at(buf: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(buf[offset..offset + 4].try_into().expect("4-byte slice"))
}

fn f32_at(buf: &[u8], offset: usize) -> f32 {
    f32::from_le_bytes(buf[offset..offset + 4].try_into().expect("4-byte slice"))
}

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Data(format!("{what} {value} does not fit in 32 bits")))
}

fn check_magic(buf: &[u8], magic: &[u8; 4], header_len: usize, name: &str) -> Result<()> {
    if buf.len() < header_len {
        return Err(Error::Format(format!(
            "{name} header needs {header_len} bytes, got {}",
            buf.len()
        )));
    }
    if &buf[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf[..4]),
            std::str::from_utf8(magic).unwrap_or_default()
        )));
    }
    Ok(())
}

fn check_payload(name: &str, expected: Option<u64>, actual: usize) -> Result<()> {
    match expected {
        Some(e) if e == actual as u64 => Ok(()),
        Some(e) => Err(Error::Format(format!("{name} declares {e} bytes but holds {actual}"))),
        None => Err(Error::Format(format!(
            "{name} header declares an impossibly large payload"
        ))),
    }
}

// ---------------------------------------------------------------------------
// RVF1

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RvfHeader {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub fps_milli: u32,
    pub frame_count: u32,
}

impl RvfHeader {
    pub fn for_geometry(geom: &GridGeometry, frame_count: usize) -> Result<Self> {
        Ok(Self {
            width: to_u32(geom.input_width, "width")?,
            height: to_u32(geom.input_height, "height")?,
            channels: to_u32(geom.channels, "channels")?,
            fps_milli: fps_to_milli(geom.fps)?,
            frame_count: to_u32(frame_count, "frame count")?,
        })
    }

    pub fn fps(&self) -> f64 {
        self.fps_milli as f64 / 1000.0
    }

    pub fn frame_len(&self) -> usize {
        self.width as usize * self.height as usize * self.channels as usize
    }

    pub fn to_bytes(&self) -> [u8; RVF_HEADER_LEN] {
        let mut out = [0u8; RVF_HEADER_LEN];
        out[..4].copy_from_slice(RVF_MAGIC);
        for (i, v) in [self.width, self.height, self.channels, self.fps_milli, self.frame_count]
            .iter()
            .enumerate()
        {
            out[4 + 4 * i..8 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn parse(buf: &[u8]) -> Result<Self> {
        check_magic(buf, RVF_MAGIC, RVF_HEADER_LEN, "RVF1")?;
        let h = Self {
            width: u32_at(buf, 4),
            height: u32_at(buf, 8),
            channels: u32_at(buf, 12),
            fps_milli: u32_at(buf, 16),
            frame_count: u32_at(buf, 20),
        };
        if h.width == 0 || h.height == 0 {
            return Err(Error::Format(format!(
                "RVF1 frame size {}x{} is empty",
                h.width, h.height
            )));
        }
        if h.channels != 1 && h.channels != 3 {
            return Err(Error::Format(format!(
                "RVF1 channels must be 1 or 3, got {}",
                h.channels
            )));
        }
        if h.fps_milli == 0 {
            return Err(Error::Format("RVF1 fps_milli must be positive".into()));
        }
        let frame = h.width as u64 * h.height as u64 * h.channels as u64;
        if frame > MAX_FRAME_BYTES {
            return Err(Error::Format(format!(
                "RVF1 frame of {frame} bytes exceeds the 1 GiB limit"
            )));
        }
        Ok(h)
    }

    /// Header fields must agree with the geometry the frames are read for.
    pub fn check_geometry(&self, geom: &GridGeometry) -> Result<()> {
        let fps_milli = fps_to_milli(geom.fps)?;
        if self.width as usize != geom.input_width
            || self.height as usize != geom.input_height
            || self.channels as usize != geom.channels
            || self.fps_milli != fps_milli
        {
            return Err(Error::Format(format!(
                "RVF1 header describes {}x{}x{} at {} fps, expected {}x{}x{} at {} fps",
                self.width,
                self.height,
                self.channels,
                self.fps(),
                geom.input_width,
                geom.input_height,
                geom.channels,
                fps_milli as f64 / 1000.0
            )));
        }
        Ok(())
    }
}

fn fps_to_milli(fps: f64) -> Result<u32> {
    let milli = (fps * 1000.0).round();
    if !(milli >= 1.0 && milli <= u32::MAX as f64) {
        return Err(Error::config("fps", format!("{fps} cannot be stored as milli-fps")));
    }
    Ok(milli as u32)
}

/// Writes an RVF1 stream. `header.frame_count` must equal the number of frames.
pub fn write_rvf<'a, W: Write>(mut w: W, header: &RvfHeader, frames: impl IntoIterator<Item = &'a [u8]>) -> Result<()> {
    w.write_all(&header.to_bytes())?;
    let mut count = 0u32;
    for frame in frames {
        if frame.len() != header.frame_len() {
            return Err(Error::InputShape(format!(
                "frame {count} has {} bytes, header declares {}",
                frame.len(),
                header.frame_len()
            )));
        }
        w.write_all(frame)?;
        count += 1;
    }
    if count != header.frame_count {
        return Err(Error::InputShape(format!(
            "header declares {} frames, {count} supplied",
            header.frame_count
        )));
    }
    w.flush()?;
    Ok(())
}

/// Source of raw 8-bit frames.
pub trait FrameSource {
    fn next_frame(&mut self) -> Result<Option<Vec<u8>>>;
}

/// Sequential RVF1 reader; works on non-seekable streams such as stdin.
pub struct RvfReader<R> {
    inner: R,
    header: RvfHeader,
    frames_read: u32,
}

impl<R: Read> RvfReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut buf = Vec::with_capacity(RVF_HEADER_LEN);
        (&mut inner).take(RVF_HEADER_LEN as u64).read_to_end(&mut buf)?;
        let header = RvfHeader::parse(&buf)?;
        Ok(Self {
            inner,
            header,
            frames_read: 0,
        })
    }

    pub fn header(&self) -> &RvfHeader {
        &self.header
    }

    fn expected_total(&self) -> u64 {
        RVF_HEADER_LEN as u64 + self.header.frame_count as u64 * self.header.frame_len() as u64
    }
}

impl<R: Read> FrameSource for RvfReader<R> {
    fn next_frame(&mut self) -> Result<Option<Vec<u8>>> {
        if self.frames_read == self.header.frame_count {
            let mut probe = [0u8; 1];
            loop {
                match self.inner.read(&mut probe) {
                    Ok(0) => return Ok(None),
                    Ok(_) => {
                        return Err(Error::Format(format!(
                            "RVF1 payload continues past the {} declared bytes",
                            self.expected_total()
                        )))
                    }
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let len = self.header.frame_len();
        let mut frame = Vec::with_capacity(len.min(1 << 24));
        (&mut self.inner).take(len as u64).read_to_end(&mut frame)?;
        if frame.len() != len {
            let actual = RVF_HEADER_LEN as u64 + self.frames_read as u64 * len as u64 + frame.len() as u64;
            return Err(Error::Format(format!(
                "RVF1 truncated: expected {} bytes, got {actual}",
                self.expected_total()
            )));
        }
        self.frames_read += 1;
        Ok(Some(frame))
    }
}

/// Image files (PNG or PPM/PGM) of a directory in lexicographic file-name order.
/// Name files with zero-padded indices (`frame_0001.png`) to keep that order
/// chronological.
pub struct ImageDirSource {
    files: std::vec::IntoIter<PathBuf>,
    geom: GridGeometry,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "ppm", "pgm", "pnm"];

/// Lists the frame images of `dir` in reading order.
pub fn image_dir_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Pixel dimensions of an image file.
pub fn image_dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok((w as usize, h as usize))
}

impl ImageDirSource {
    pub fn new(dir: &Path, geom: &GridGeometry) -> Result<Self> {
        geom.validate()?;
        let files = image_dir_files(dir)?;
        if files.is_empty() {
            return Err(Error::Format(format!("{} contains no PNG/PPM images", dir.display())));
        }
        Ok(Self {
            files: files.into_iter(),
            geom: *geom,
        })
    }
}

impl FrameSource for ImageDirSource {
    fn next_frame(&mut self) -> Result<Option<Vec<u8>>> {
        let Some(path) = self.files.next() else {
            return Ok(None);
        };
        let img = image::open(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w != self.geom.input_width || h != self.geom.input_height {
            return Err(Error::InputShape(format!(
                "{} is {w}x{h}, expected {}x{}",
                path.display(),
                self.geom.input_width,
                self.geom.input_height
            )));
        }
        Ok(Some(match self.geom.channels {
            1 => img.into_luma8().into_raw(),
            _ => img.into_rgb8().into_raw(),
        }))
    }
}

/// Raw frames of one temporal step.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStep {
    pub step: usize,
    pub frames: Vec<Vec<u8>>,
    /// Frames appended by repeating the last real frame.
    pub padded: usize,
}

/// Groups frames into temporal steps of `temporal_patch` frames. A trailing
/// partial group is completed by repeating its last frame.
pub struct FrameSteps<S> {
    source: S,
    temporal_patch: usize,
    next_step: usize,
    done: bool,
    warnings: Vec<String>,
}

impl<S: FrameSource> FrameSteps<S> {
    pub fn new(source: S, temporal_patch: usize) -> Self {
        Self {
            source,
            temporal_patch: temporal_patch.max(1),
            next_step: 0,
            done: false,
            warnings: Vec::new(),
        }
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    fn next_step(&mut self) -> Result<Option<FrameStep>> {
        let mut frames = Vec::with_capacity(self.temporal_patch);
        while frames.len() < self.temporal_patch {
            match self.source.next_frame()? {
                Some(f) => frames.push(f),
                None => break,
            }
        }
        if frames.is_empty() {
            return Ok(None);
        }
        let padded = self.temporal_patch - frames.len();
        if padded > 0 {
            let msg = format!(
                "step {}: input ended after {} of {} frames; repeating the last frame",
                self.next_step,
                frames.len(),
                self.temporal_patch
            );
            log::warn!("{msg}");
            self.warnings.push(msg);
            let last = frames.last().cloned().expect("non-empty");
            frames.resize(self.temporal_patch, last);
        }
        let step = self.next_step;
        self.next_step += 1;
        Ok(Some(FrameStep { step, frames, padded }))
    }
}

impl<S: FrameSource> Iterator for FrameSteps<S> {
    type Item = Result<FrameStep>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_step() {
            Ok(Some(step)) => Some(Ok(step)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Reads an RVF1 stream as temporal steps of `geom`. The header must describe
/// the same frame size, channel count and frame rate as `geom`.
pub fn read_frames<R: Read>(source: R, geom: &GridGeometry) -> Result<FrameSteps<RvfReader<R>>> {
    geom.validate()?;
    let reader = RvfReader::new(source)?;
    reader.header().check_geometry(geom)?;
    Ok(FrameSteps::new(reader, geom.temporal_patch))
}

/// Reads a directory of equally sized images as temporal steps of `geom`.
pub fn read_image_dir(dir: &Path, geom: &GridGeometry) -> Result<FrameSteps<ImageDirSource>> {
    Ok(FrameSteps::new(ImageDirSource::new(dir, geom)?, geom.temporal_patch))
}

// ---------------------------------------------------------------------------
// TKE1

/// Writes token grids as one TKE1 file; grid `i` is stored as step `i`.
pub fn write_embeddings<W: Write>(mut w: W, grids: &[TokenGrid]) -> Result<()> {
    let (h, wd, d) = match grids.first() {
        Some(g) => (g.height(), g.width(), g.dim()),
        None => {
            return Err(Error::InputShape(
                "TKE1 needs at least one grid to fix its lattice".into(),
            ))
        }
    };
    for g in grids {
        if (g.height(), g.width(), g.dim()) != (h, wd, d) {
            return Err(Error::InputShape(format!(
                "grid of step {} is {}x{}x{}, expected {h}x{wd}x{d}",
                g.step,
                g.height(),
                g.width(),
                g.dim()
            )));
        }
    }
    let mut header = Vec::with_capacity(TKE_HEADER_LEN);
    header.extend_from_slice(TKE_MAGIC);
    for v in [grids.len(), h, wd, d] {
        header.extend_from_slice(&to_u32(v, "TKE1 dimension")?.to_le_bytes());
    }
    w.write_all(&header)?;
    let mut payload = Vec::with_capacity(grids.len() * h * wd * d * 4);
    for g in grids {
        for v in g.values() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

/// Parses a TKE1 buffer into `T` token grids with steps `0..T`.
pub fn parse_embeddings(buf: &[u8]) -> Result<Vec<TokenGrid>> {
    check_magic(buf, TKE_MAGIC, TKE_HEADER_LEN, "TKE1")?;
    let (t, h, w, d) = (
        u32_at(buf, 4) as usize,
        u32_at(buf, 8) as usize,
        u32_at(buf, 12) as usize,
        u32_at(buf, 16) as usize,
    );
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::Format(format!("TKE1 lattice {h}x{w}x{d} is empty")));
    }
    let expected = (t as u64)
        .checked_mul(h as u64)
        .and_then(|n| n.checked_mul(w as u64))
        .and_then(|n| n.checked_mul(d as u64))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(TKE_HEADER_LEN as u64));
    check_payload("TKE1", expected, buf.len())?;

    let per_step = h * w * d;
    let mut grids = Vec::with_capacity(t);
    for step in 0..t {
        let base = TKE_HEADER_LEN + step * per_step * 4;
        let values: Vec<f32> = (0..per_step).map(|i| f32_at(buf, base + 4 * i)).collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (cell, k) = (i / d, i % d);
            return Err(Error::Data(format!(
                "non-finite value {} at (t={step}, h={}, w={}, d={k})",
                values[i],
                cell / w,
                cell % w
            )));
        }
        grids.push(TokenGrid::new(step, h, w, d, values)?);
    }
    Ok(grids)
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<Vec<TokenGrid>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    parse_embeddings(&buf)
}

// ---------------------------------------------------------------------------
// STK1

pub fn write_slim<W: Write>(mut w: W, stream: &SlimTokenStream) -> Result<()> {
    if !stream.is_sorted() {
        return Err(Error::Data(
            "slim stream records are not strictly sorted by (t, h, w)".into(),
        ));
    }
    if stream.embeddings.len() != stream.len() * stream.dim {
        return Err(Error::InputShape(format!(
            "{} records of width {} need {} values, got {}",
            stream.len(),
            stream.dim,
            stream.len() * stream.dim,
            stream.embeddings.len()
        )));
    }
    let mut out = Vec::with_capacity(STK_HEADER_LEN + stream.len() * (12 + 4 * stream.dim));
    out.extend_from_slice(STK_MAGIC);
    out.extend_from_slice(&to_u32(stream.len(), "record count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(stream.dim, "embedding width")?.to_le_bytes());
    for (pos, emb) in stream.iter() {
        for c in [pos.t, pos.h, pos.w] {
            out.extend_from_slice(&to_u32(c, "position")?.to_le_bytes());
        }
        for v in emb {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&out)?;
    w.flush()?;
    Ok(())
}

/// Parses an STK1 buffer. `source_steps` is set to the number of distinct
/// temporal indices present, since the format does not store fully dropped steps.
pub fn parse_slim(buf: &[u8]) -> Result<SlimTokenStream> {
    check_magic(buf, STK_MAGIC, STK_HEADER_LEN, "STK1")?;
    let count = u32_at(buf, 4) as u64;
    let dim = u32_at(buf, 8) as u64;
    let record = 12 + 4 * dim;
    let expected = count
        .checked_mul(record)
        .and_then(|n| n.checked_add(STK_HEADER_LEN as u64));
    check_payload("STK1", expected, buf.len())?;

    let (count, dim, record) = (count as usize, dim as usize, record as usize);
    let mut positions = Vec::with_capacity(count);
    let mut embeddings = Vec::with_capacity(count * dim);
    for i in 0..count {
        let base = STK_HEADER_LEN + i * record;
        let pos = Position3D::new(
            u32_at(buf, base) as usize,
            u32_at(buf, base + 4) as usize,
            u32_at(buf, base + 8) as usize,
        );
        if let Some(prev) = positions.last() {
            if pos <= *prev {
                return Err(Error::Format(format!("STK1 record {i} at {pos} is not after {prev}")));
            }
        }
        positions.push(pos);
        for k in 0..dim {
            let v = f32_at(buf, base + 12 + 4 * k);
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value {v} in STK1 record {i} at {pos}, d={k}"
                )));
            }
            embeddings.push(v);
        }
    }
    let source_steps = positions.iter().map(|p| p.t).collect::<BTreeSet<_>>().len();
    Ok(SlimTokenStream {
        dim,
        positions,
        embeddings,
        source_steps,
    })
}

pub fn read_slim<R: Read>(mut r: R) -> Result<SlimTokenStream> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    parse_slim(&buf)
}

// ---------------------------------------------------------------------------
// DMK1

/// Writes the masks of steps `0..T` of one clip.
pub fn write_masks<W: Write>(mut w: W, masks: &[DropMask]) -> Result<()> {
    let (h, wd) = masks.first().map_or((0, 0), |m| (m.height, m.width));
    for (i, m) in masks.iter().enumerate() {
        if m.step != i {
            return Err(Error::InputShape(format!("mask {i} belongs to step {}", m.step)));
        }
        if (m.height, m.width) != (h, wd) || m.bits.len() != h * wd {
            return Err(Error::InputShape(format!(
                "mask of step {i} is {}x{}, expected {h}x{wd}",
                m.height, m.width
            )));
        }
    }
    let mut out = Vec::with_capacity(MASK_HEADER_LEN + masks.len() * h * wd);
    out.extend_from_slice(MASK_MAGIC);
    for v in [masks.len(), h, wd] {
        out.extend_from_slice(&to_u32(v, "mask dimension")?.to_le_bytes());
    }
    for m in masks {
        out.extend(m.bits.iter().map(|&b| b as u8));
    }
    w.write_all(&out)?;
    w.flush()?;
    Ok(())
}

pub fn parse_masks(buf: &[u8]) -> Result<Vec<DropMask>> {
    check_magic(buf, MASK_MAGIC, MASK_HEADER_LEN, "DMK1")?;
    let (t, h, w) = (u32_at(buf, 4) as u64, u32_at(buf, 8) as u64, u32_at(buf, 12) as u64);
    let expected = t
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .and_then(|n| n.checked_add(MASK_HEADER_LEN as u64));
    check_payload("DMK1", expected, buf.len())?;
    let (t, h, w) = (t as usize, h as usize, w as usize);
    let payload = &buf[MASK_HEADER_LEN..];
    if let Some(i) = payload.iter().position(|&b| b > 1) {
        return Err(Error::Format(format!(
            "DMK1 cell {i} holds {}, expected 0 or 1",
            payload[i]
        )));
    }
    Ok((0..t)
        .map(|step| DropMask {
            step,
            height: h,
            width: w,
            bits: payload[step * h * w..(step + 1) * h * w]
                .iter()
                .map(|&b| b == 1)
                .collect(),
        })
        .collect())
}

pub fn read_masks<R: Read>(mut r: R) -> Result<Vec<DropMask>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    parse_masks(&buf)
}

// ---------------------------------------------------------------------------
// Timeline

pub fn timeline_line(entry: &TimelineEntry) -> String {
    serde_json::to_string(entry).expect("timeline entries serialize")
}

pub fn write_timeline<W: Write>(mut w: W, entries: &[TimelineEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        if !e.wall_time.is_finite() || !e.drop_ratio.is_finite() {
            return Err(Error::Data(format!("timeline entry of step {} is not finite", e.step)));
        }
        out.push_str(&timeline_line(e));
        out.push('\n');
    }
    w.write_all(out.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn parse_timeline(text: &[u8]) -> Result<Vec<TimelineEntry>> {
    let text = std::str::from_utf8(text).map_err(|e| Error::Format(format!("timeline is not UTF-8: {e}")))?;
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.pop() != Some("") {
        return Err(Error::Format("timeline does not end with a newline".into()));
    }
    let mut entries: Vec<TimelineEntry> = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let bad = |why: String| Error::Format(format!("timeline line {}: {why}", i + 1));
        let e: TimelineEntry = serde_json::from_str(line).map_err(|err| bad(err.to_string()))?;
        if timeline_line(&e) != *line {
            return Err(bad("record is not in canonical form".into()));
        }
        if e.total == 0 || e.retained > e.total {
            return Err(bad(format!("retained {} of total {}", e.retained, e.total)));
        }
        if e.drop_ratio != ratio_of(e.total - e.retained, e.total) {
            return Err(bad(format!(
                "drop_ratio {} disagrees with retained {} of {}",
                e.drop_ratio, e.retained, e.total
            )));
        }
        if !(e.wall_time.is_finite() && e.wall_time >= 0.0) || (e.step == 0 && e.wall_time != 0.0) {
            return Err(bad(format!("wall_time {} is invalid for step {}", e.wall_time, e.step)));
        }
        match entries.last() {
            None if e.drop_ratio != 0.0 || e.is_trigger => {
                return Err(bad("first entry must keep every token and not trigger".into()))
            }
            Some(prev) if e.step <= prev.step || e.wall_time <= prev.wall_time => {
                return Err(bad(format!("step {} does not follow step {}", e.step, prev.step)))
            }
            _ => {}
        }
        entries.push(e);
    }
    Ok(entries)
}

pub fn read_timeline<R: Read>(mut r: R) -> Result<Vec<TimelineEntry>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    parse_timeline(&buf)
}

// ---------------------------------------------------------------------------
// Path helpers

fn create(path: &Path) -> Result<io::BufWriter<fs::File>> {
    let file = fs::File::create(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(io::BufWriter::new(file))
}

fn open(path: &Path) -> Result<io::BufReader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(io::BufReader::new(file))
}

pub fn write_slim_file(path: &Path, stream: &SlimTokenStream) -> Result<()> {
    write_slim(create(path)?, stream)
}

pub fn write_masks_file(path: &Path, masks: &[DropMask]) -> Result<()> {
    write_masks(create(path)?, masks)
}

pub fn write_timeline_file(path: &Path, entries: &[TimelineEntry]) -> Result<()> {
    write_timeline(create(path)?, entries)
}

pub fn write_embeddings_file(path: &Path, grids: &[TokenGrid]) -> Result<()> {
    write_embeddings(create(path)?, grids)
}

pub fn read_embeddings_file(path: &Path) -> Result<Vec<TokenGrid>> {
    read_embeddings(open(path)?)
}

pub fn read_slim_file(path: &Path) -> Result<SlimTokenStream> {
    read_slim(open(path)?)
}

pub fn read_masks_file(path: &Path) -> Result<Vec<DropMask>> {
    read_masks(open(path)?)
}

pub fn read_timeline_file(path: &Path) -> Result<Vec<TimelineEntry>> {
    read_timeline(open(path)?)
}

pub fn open_frames_file(path: &Path, geom: &GridGeometry) -> Result<FrameSteps<RvfReader<io::BufReader<fs::File>>>> {
    read_frames(open(path)?, geom)
}
