//! On-disk sequences: one directory per sequence holding `00000001.ppm`,
//! `00000002.ppm`, ... and a `groundtruth.txt` of `x,y,w,h` lines.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::image::read_ppm;
use crate::tensor::Tensor;

pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";

pub fn frame_name(index: usize) -> String {
    format!("{:08}.ppm", index + 1)
}

fn parse_box_line(line: &str, path: &Path, no: usize) -> Result<BBox> {
    let vals: Vec<f64> = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format {
            what: "box file",
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", no + 1),
        })?;
    if vals.len() != 4 {
        return Err(Error::Format {
            what: "box file",
            path: path.to_path_buf(),
            msg: format!("line {}: expected x,y,w,h, got {line:?}", no + 1),
        });
    }
    Ok(BBox::from_xywh(vals[0], vals[1], vals[2], vals[3]))
}

/// Reads every `x,y,w,h` line of a box file.
pub fn read_boxes(path: &Path) -> Result<Vec<BBox>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(no, l)| parse_box_line(l, path, no))
        .collect()
}

fn read_first_box(path: &Path) -> Result<BBox> {
    let file = fs::File::open(path).map_err(Error::io(path))?;
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if !line.trim().is_empty() {
            return parse_box_line(&line, path, no);
        }
    }
    Err(Error::Format {
        what: "box file",
        path: path.to_path_buf(),
        msg: "no boxes".into(),
    })
}

/// Formats boxes as `x,y,w,h` lines with fixed precision.
pub fn format_boxes(boxes: &[BBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        let [x, y, w, h] = b.to_xywh();
        out.push_str(&format!("{},{},{},{}\n", fmt_num(x), fmt_num(y), fmt_num(w), fmt_num(h)));
    }
    out
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn write_boxes(path: &Path, boxes: &[BBox]) -> Result<()> {
    fs::write(path, format_boxes(boxes)).map_err(Error::io(path))
}

/// A sequence directory with its frame list.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDir {
    pub id: String,
    pub dir: PathBuf,
    pub frames: Vec<PathBuf>,
}

impl SequenceDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut frames: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(Error::io(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
            .collect();
        frames.sort();
        if frames.is_empty() {
            return Err(Error::Format {
                what: "sequence",
                path: dir.to_path_buf(),
                msg: "no .ppm frames".into(),
            });
        }
        Ok(SequenceDir {
            id,
            dir: dir.to_path_buf(),
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, index: usize) -> Result<Tensor> {
        let p = self.frames.get(index).ok_or_else(|| {
            Error::shape(format!("sequence {} has no frame {}", self.id, index + 1))
        })?;
        read_ppm(p)
    }

    /// Full ground truth; for training and evaluation only.
    pub fn groundtruth(&self) -> Result<Vec<BBox>> {
        let p = self.dir.join(GROUNDTRUTH_FILE);
        let boxes = read_boxes(&p)?;
        if boxes.len() != self.frames.len() {
            return Err(Error::Format {
                what: "ground truth",
                path: p,
                msg: format!("{} boxes for {} frames", boxes.len(), self.frames.len()),
            });
        }
        Ok(boxes)
    }

    /// The view a tracker gets: frames plus the first ground-truth box only.
    pub fn tracking_input(&self) -> Result<TrackingInput> {
        let init = read_first_box(&self.dir.join(GROUNDTRUTH_FILE))?;
        init.require_well_formed()?;
        Ok(TrackingInput {
            seq: self.clone(),
            init,
        })
    }
}

/// Frames of one sequence plus its initial box. Later ground truth is not
/// reachable from here.
#[derive(Debug, Clone)]
pub struct TrackingInput {
    seq: SequenceDir,
    init: BBox,
}

impl TrackingInput {
    pub fn id(&self) -> &str {
        &self.seq.id
    }

    pub fn init_box(&self) -> BBox {
        self.init
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    pub fn frame(&self, index: usize) -> Result<Tensor> {
        self.seq.frame(index)
    }
}

/// Every subdirectory of `root` holding a ground-truth file, sorted by name.
pub fn list_sequences(root: &Path) -> Result<Vec<SequenceDir>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(Error::io(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(GROUNDTRUTH_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    dirs.iter().map(|d| SequenceDir::open(d)).collect()
}
