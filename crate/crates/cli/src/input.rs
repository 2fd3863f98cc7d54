//! Input sniffing: an RVF1 stream, a TKE1 embedding file, or a directory of
//! images. Every input is turned into a sequence of raw steps.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dtd_core::io::{
    image_dimensions, image_dir_files, read_embeddings, FrameStep, FrameSteps, ImageDirSource, RvfReader,
};
use dtd_core::{patchify, FrameSamples, GridGeometry, StepInput, TokenGrid};

use crate::options::{name_flag, EngineArgs};

/// One temporal step before patching.
pub enum RawStep {
    Frames(FrameStep),
    Tokens(TokenGrid),
}

impl RawStep {
    pub fn to_input(&self, geom: &GridGeometry) -> Result<StepInput> {
        Ok(match self {
            RawStep::Frames(f) => {
                let samples: Vec<_> = f.frames.iter().map(|x| FrameSamples::U8(x)).collect();
                StepInput::pixels(patchify(&samples, geom, f.step)?)
            }
            RawStep::Tokens(t) => StepInput::tokens(t.clone()),
        })
    }
}

enum Kind {
    Rvf(FrameSteps<RvfReader<Box<dyn Read>>>),
    Images(FrameSteps<ImageDirSource>),
    Tokens(std::vec::IntoIter<TokenGrid>),
}

pub struct Input {
    pub geom: GridGeometry,
    pub label: String,
    kind: Kind,
}

impl Input {
    pub fn has_pixels(&self) -> bool {
        !matches!(self.kind, Kind::Tokens(_))
    }

    /// Opens `path`; `-` reads RVF1 from stdin.
    pub fn open(path: &Path, args: &EngineArgs) -> Result<Self> {
        if path == Path::new("-") {
            let stdin: Box<dyn Read> = Box::new(BufReader::new(io::stdin()));
            return Self::rvf(stdin, "<stdin>".into(), args);
        }
        let label = path.display().to_string();
        if path.is_dir() {
            return Self::images(path, label, args);
        }
        let file = File::open(path).with_context(|| format!("opening {label}"))?;
        let mut reader = BufReader::new(file);
        let magic = reader.fill_buf().with_context(|| format!("reading {label}"))?;
        match magic.get(..4) {
            Some(b"RVF1") => Self::rvf(Box::new(reader), label, args),
            Some(b"TKE1") => Self::tokens(reader, label, args),
            _ => Err(anyhow::Error::new(dtd_core::Error::Format(
                "not an RVF1 video, TKE1 embedding file or image directory".into(),
            ))
            .context(label)),
        }
    }

    pub fn rvf(reader: Box<dyn Read>, label: String, args: &EngineArgs) -> Result<Self> {
        let rvf = RvfReader::new(reader).with_context(|| label.clone())?;
        let h = *rvf.header();
        let geom = args.geometry(
            h.width as usize,
            h.height as usize,
            h.channels as usize,
            h.fps(),
            &label,
        )?;
        if args.fps.is_none() {
            h.check_geometry(&geom).with_context(|| label.clone())?;
        }
        Ok(Self {
            kind: Kind::Rvf(FrameSteps::new(rvf, geom.temporal_patch)),
            geom,
            label,
        })
    }

    fn images(dir: &Path, label: String, args: &EngineArgs) -> Result<Self> {
        let files: Vec<PathBuf> = image_dir_files(dir).with_context(|| label.clone())?;
        let Some(first) = files.first() else {
            bail!(
                anyhow::Error::new(dtd_core::Error::Format("directory contains no PNG/PPM images".into()))
                    .context(label)
            );
        };
        let (w, h) = image_dimensions(first)?;
        let geom = args.geometry(w, h, args.channels, 1.0, &label)?;
        let source = ImageDirSource::new(dir, &geom).map_err(|e| name_flag(e, &label))?;
        Ok(Self {
            kind: Kind::Images(FrameSteps::new(source, geom.temporal_patch)),
            geom,
            label,
        })
    }

    fn tokens(reader: impl Read, label: String, args: &EngineArgs) -> Result<Self> {
        let grids = read_embeddings(reader).with_context(|| label.clone())?;
        let Some(first) = grids.first() else {
            bail!(anyhow::Error::new(dtd_core::Error::Format("embedding file holds no steps".into())).context(label));
        };
        let block = args.patch_size * args.spatial_merge;
        let geom = args.geometry(first.width() * block, first.height() * block, 3, 1.0, &label)?;
        Ok(Self {
            kind: Kind::Tokens(grids.into_iter()),
            geom,
            label,
        })
    }
}

impl Iterator for Input {
    type Item = Result<RawStep>;

    fn next(&mut self) -> Option<Self::Item> {
        let label = &self.label;
        let item = match &mut self.kind {
            Kind::Rvf(s) => s.next().map(|r| r.map(RawStep::Frames)),
            Kind::Images(s) => s.next().map(|r| r.map(RawStep::Frames)),
            Kind::Tokens(s) => s.next().map(|t| Ok(RawStep::Tokens(t))),
        };
        item.map(|r| r.with_context(|| label.clone()))
    }
}
