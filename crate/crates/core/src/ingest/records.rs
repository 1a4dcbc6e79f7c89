use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROPOSAL_FRAMES_FORMAT: &str = "proposal_frames";
pub const FRAME_VECTORS_FORMAT: &str = "frame_vectors";

/// Axis-aligned pixel box `(x1, y1, x2, y2)` with `x1 < x2`, `y1 < y2`.
/// Serialized as a four-element array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub feature: Vec<f64>,
}

/// A frame's region proposals with their visual features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalFrame {
    pub frame_id: String,
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    pub proposals: Vec<Proposal>,
}

impl ProposalFrame {
    pub fn feature_dim(&self) -> Option<usize> {
        self.proposals.first().map(|p| p.feature.len())
    }
}

/// Whole-frame feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameVector {
    pub frame_id: String,
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    pub feature: Vec<f64>,
}

/// Human-drawn boxes for an entity in a frame. No boxes means the
/// annotator found nothing to label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub frame_id: String,
    pub entity: String,
    pub boxes: Vec<BBox>,
}

/// An entity uttered in a video, paired with the frame at the end of the
/// utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityFramePair {
    pub entity: String,
    pub video_id: String,
    pub timestamp_s: f64,
    pub frame_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub format: String,
    pub feature_dim: usize,
}

pub fn read_proposal_frames<R: BufRead>(source: R) -> Result<Vec<ProposalFrame>> {
    let (dim, frames) = read_with_header::<_, ProposalFrame>(source, PROPOSAL_FRAMES_FORMAT)?;
    for (index, f) in frames.iter().enumerate() {
        validate_proposal_frame(f, dim).map_err(|msg| Error::Record { index, msg })?;
    }
    Ok(frames)
}

pub fn write_proposal_frames<W: Write>(
    frames: &[ProposalFrame],
    feature_dim: usize,
    sink: W,
) -> Result<()> {
    for (index, f) in frames.iter().enumerate() {
        validate_proposal_frame(f, feature_dim).map_err(|msg| Error::Record { index, msg })?;
    }
    write_with_header(frames, PROPOSAL_FRAMES_FORMAT, feature_dim, sink)
}

pub fn read_frame_vectors<R: BufRead>(source: R) -> Result<Vec<FrameVector>> {
    let (dim, frames) = read_with_header::<_, FrameVector>(source, FRAME_VECTORS_FORMAT)?;
    for (index, f) in frames.iter().enumerate() {
        validate_frame_vector(f, dim).map_err(|msg| Error::Record { index, msg })?;
    }
    Ok(frames)
}

pub fn write_frame_vectors<W: Write>(
    frames: &[FrameVector],
    feature_dim: usize,
    sink: W,
) -> Result<()> {
    for (index, f) in frames.iter().enumerate() {
        validate_frame_vector(f, feature_dim).map_err(|msg| Error::Record { index, msg })?;
    }
    write_with_header(frames, FRAME_VECTORS_FORMAT, feature_dim, sink)
}

pub fn read_gold<R: BufRead>(source: R) -> Result<Vec<GoldAnnotation>> {
    read_records(source)
}

pub fn write_gold<W: Write>(gold: &[GoldAnnotation], mut sink: W) -> Result<()> {
    write_records(gold, &mut sink)
}

pub fn read_pairs<R: BufRead>(source: R) -> Result<Vec<EntityFramePair>> {
    let pairs: Vec<EntityFramePair> = read_records(source)?;
    for (index, p) in pairs.iter().enumerate() {
        if p.entity.is_empty() || !p.timestamp_s.is_finite() || p.timestamp_s < 0.0 {
            return Err(Error::Record {
                index,
                msg: "pair needs a non-empty entity and a non-negative timestamp".into(),
            });
        }
    }
    Ok(pairs)
}

pub fn write_pairs<W: Write>(pairs: &[EntityFramePair], mut sink: W) -> Result<()> {
    write_records(pairs, &mut sink)
}

fn validate_proposal_frame(f: &ProposalFrame, dim: usize) -> std::result::Result<(), String> {
    if f.proposals.is_empty() {
        return Err(format!("frame {} has no proposals", f.frame_id));
    }
    for (k, p) in f.proposals.iter().enumerate() {
        if p.feature.len() != dim {
            return Err(format!(
                "frame {} proposal {k}: feature length {}, header declares {dim}",
                f.frame_id,
                p.feature.len()
            ));
        }
        if p.feature.iter().any(|v| !v.is_finite()) {
            return Err(format!(
                "frame {} proposal {k}: non-finite feature",
                f.frame_id
            ));
        }
    }
    Ok(())
}

fn validate_frame_vector(f: &FrameVector, dim: usize) -> std::result::Result<(), String> {
    if f.feature.len() != dim {
        return Err(format!(
            "frame {}: feature length {}, header declares {dim}",
            f.frame_id,
            f.feature.len()
        ));
    }
    if f.feature.iter().any(|v| !v.is_finite()) {
        return Err(format!("frame {}: non-finite feature", f.frame_id));
    }
    Ok(())
}

fn read_with_header<R: BufRead, T: DeserializeOwned>(
    source: R,
    format: &str,
) -> Result<(usize, Vec<T>)> {
    let mut lines = source.lines().enumerate();
    let header: FeatureHeader = loop {
        match lines.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("missing {format} header"),
                })
            }
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("bad header: {e}"),
                })?;
            }
        }
    };
    if header.format != format {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected format {format:?}, found {:?}", header.format),
        });
    }
    if header.feature_dim == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "feature_dim must be positive".into(),
        });
    }
    let records = parse_lines(lines)?;
    Ok((header.feature_dim, records))
}

fn read_records<R: BufRead, T: DeserializeOwned>(source: R) -> Result<Vec<T>> {
    parse_lines(source.lines().enumerate())
}

fn parse_lines<I, T>(lines: I) -> Result<Vec<T>>
where
    I: Iterator<Item = (usize, std::io::Result<String>)>,
    T: DeserializeOwned,
{
    let mut out = Vec::new();
    for (_, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let index = out.len();
        let rec = serde_json::from_str(&line).map_err(|e| Error::Record {
            index,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn write_with_header<W: Write, T: Serialize>(
    records: &[T],
    format: &str,
    dim: usize,
    mut sink: W,
) -> Result<()> {
    let header = FeatureHeader {
        format: format.to_string(),
        feature_dim: dim,
    };
    serde_json::to_writer(&mut sink, &header).map_err(to_io)?;
    sink.write_all(b"\n")?;
    write_records(records, &mut sink)
}

fn write_records<W: Write, T: Serialize>(records: &[T], sink: &mut W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *sink, r).map_err(to_io)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

fn to_io(e: serde_json::Error) -> Error {
    Error::Io(e.into())
}
