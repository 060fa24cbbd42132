//! File formats: DCES binary sequences, PGM and text label maps, CSV
//! reports. Every writer goes through [`write_atomic`].

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::clustering::{MergeRecord, Segmentation};
use crate::diagnostics::Histogram;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::labels::LabelMap;

pub const DCES_MAGIC: &[u8; 4] = b"DCES";
pub const DCES_VERSION: u8 = 1;

pub const TRACE_HEADER: &str = "iteration,phase,id_a,id_b,new_id,p_raw,p_corrected,control,ell";

/// Contents of a DCES file, stored exactly as on disk: intensities are
/// 32-bit and time-major, `frames[j * voxels + v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DcesFile {
    pub dims: Vec<usize>,
    pub times: Vec<f64>,
    pub frames: Vec<f32>,
}

impl DcesFile {
    /// Converts voxel-major `f64` samples to the on-disk layout.
    pub fn from_voxel_major(grid: &Grid, times: &[f64], data: &[f64]) -> Result<Self> {
        let (v, n) = (grid.voxel_count(), times.len());
        if data.len() != v * n {
            return Err(Error::shape(format!("expected {} samples, got {}", v * n, data.len())));
        }
        let mut frames = vec![0f32; v * n];
        for (voxel, curve) in data.chunks_exact(n).enumerate() {
            for (j, &x) in curve.iter().enumerate() {
                frames[j * v + voxel] = x as f32;
            }
        }
        Ok(Self { dims: grid.dims().to_vec(), times: times.to_vec(), frames })
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims.clone())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Voxel-major `f64` samples.
    pub fn to_voxel_major(&self) -> Vec<f64> {
        let (v, n) = (self.voxel_count(), self.times.len());
        let mut out = vec![0.0; v * n];
        for j in 0..n {
            for voxel in 0..v {
                out[voxel * n + j] = f64::from(self.frames[j * v + voxel]);
            }
        }
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if !(2..=3).contains(&self.dims.len()) {
            return Err(Error::shape(format!("DCES stores 2 or 3 dimensions, got {}", self.dims.len())));
        }
        if self.frames.len() != self.voxel_count() * self.times.len() {
            return Err(Error::shape("frame count does not match dims × times"));
        }
        let to_u32 = |x: usize, what: &str| {
            u32::try_from(x).map_err(|_| Error::shape(format!("{what} {x} does not fit in 32 bits")))
        };
        let mut out = Vec::with_capacity(10 + 4 * self.dims.len() + 8 * self.times.len() + 4 * self.frames.len());
        out.extend_from_slice(DCES_MAGIC);
        out.push(DCES_VERSION);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
        }
        out.extend_from_slice(&to_u32(self.times.len(), "time count")?.to_le_bytes());
        for t in &self.times {
            out.extend_from_slice(&t.to_le_bytes());
        }
        for x in &self.frames {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != DCES_MAGIC {
            return Err(r.fail(0, "bad magic, expected \"DCES\""));
        }
        let version = r.take(1, "version")?[0];
        if version != DCES_VERSION {
            return Err(r.fail(4, format!("unsupported version {version}")));
        }
        let ndims = r.take(1, "ndims")?[0] as usize;
        if !(2..=3).contains(&ndims) {
            return Err(r.fail(5, format!("ndims must be 2 or 3, got {ndims}")));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            let at = r.pos;
            let d = r.u32("dimension")? as usize;
            if d == 0 {
                return Err(r.fail(at, "zero dimension"));
            }
            dims.push(d);
        }
        let n = r.u32("time count")? as usize;
        let voxels: usize = dims.iter().product();
        let needed = (n as u128) * 8 + (n as u128) * (voxels as u128) * 4;
        let remaining = (bytes.len() - r.pos) as u128;
        if remaining < needed {
            return Err(r.fail(bytes.len(), format!("truncated: {needed} payload bytes expected, {remaining} present")));
        }
        let mut times = Vec::with_capacity(n);
        for _ in 0..n {
            times.push(f64::from_le_bytes(r.take(8, "time")?.try_into().expect("8 bytes")));
        }
        let frames = r
            .take(4 * n * voxels, "intensities")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { dims, times, frames })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.fail(self.bytes.len(), format!("unexpected end of file reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format { offset: offset as u64, message: message.into() }
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn read_dces(path: &Path) -> Result<DcesFile> {
    DcesFile::decode(&std::fs::read(path)?)
}

pub fn write_dces(path: &Path, file: &DcesFile) -> Result<()> {
    write_atomic(path, &file.encode()?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Formats with 6 significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Label map text: PGM P2 for 2D grids, `x y z label` lines for 3D.
///
/// The PGM maxval is the largest label, raised to 1 for single-cluster maps
/// since PGM requires a positive maxval.
pub fn label_map_text(labels: &LabelMap) -> String {
    let grid = labels.grid();
    let max = labels.labels().iter().copied().max().unwrap_or(0);
    let mut s = String::new();
    match grid.dims() {
        [w, h] => {
            let _ = writeln!(s, "P2\n{w} {h}\n{}", max.max(1));
            for row in labels.labels().chunks(*w) {
                let line: Vec<String> = row.iter().map(u32::to_string).collect();
                s.push_str(&line.join(" "));
                s.push('\n');
            }
        }
        dims => {
            let _ = writeln!(s, "# labels3d {} {} {} {}", dims[0], dims[1], dims[2], labels.cluster_count());
            s.push_str("x y z label\n");
            for (v, l) in labels.labels().iter().enumerate() {
                let [x, y, z] = grid.coords(v);
                let _ = writeln!(s, "{x} {y} {z} {l}");
            }
        }
    }
    s
}

/// PGM P2 with values in {0, 1}.
pub fn mask_pgm(grid: &Grid, mask: &[bool]) -> Result<String> {
    let [w, h] = grid.dims() else {
        return Err(Error::shape("PGM output needs a 2D grid"));
    };
    if mask.len() != grid.voxel_count() {
        return Err(Error::shape("mask length differs from the grid"));
    }
    let mut s = format!("P2\n{w} {h}\n1\n");
    for row in mask.chunks(*w) {
        let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    Ok(s)
}

fn format_error(token_start: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: token_start as u64, message: message.into() }
}

/// Whitespace tokens with their byte offsets, `#` comments removed.
fn tokens(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.split('#').next().unwrap_or("");
        let mut pos = 0;
        for tok in body.split_whitespace() {
            let start = body[pos..].find(tok).expect("token in line") + pos;
            out.push((offset + start, tok));
            pos = start + tok.len();
        }
        offset += line.len();
    }
    out
}

fn parse_num<T: std::str::FromStr>(tok: (usize, &str), what: &str) -> Result<T> {
    tok.1.parse().map_err(|_| format_error(tok.0, format!("invalid {what} {:?}", tok.1)))
}

/// Reads a label map written by [`label_map_text`], or any ASCII PGM (P2).
/// Label values are renamed to contiguous `0..k` in order of first value.
pub fn parse_label_map(text: &str) -> Result<LabelMap> {
    if text.trim_start().starts_with("# labels3d") {
        return parse_label_map_3d(text);
    }
    let toks = tokens(text);
    let mut it = toks.iter().copied();
    let missing = || format_error(text.len(), "unexpected end of label map");
    let magic = it.next().ok_or_else(missing)?;
    if magic.1 != "P2" {
        return Err(format_error(magic.0, "expected PGM magic \"P2\""));
    }
    let w: usize = parse_num(it.next().ok_or_else(missing)?, "width")?;
    let h: usize = parse_num(it.next().ok_or_else(missing)?, "height")?;
    let maxval_tok = it.next().ok_or_else(missing)?;
    let maxval: u64 = parse_num(maxval_tok, "maxval")?;
    let grid = Grid::new_2d(w, h).map_err(|_| format_error(magic.0, "invalid PGM dimensions"))?;
    let mut raw = Vec::with_capacity(w * h);
    for tok in it.by_ref().take(w * h) {
        let v: u64 = parse_num(tok, "pixel")?;
        if v > maxval {
            return Err(format_error(tok.0, format!("pixel {v} exceeds maxval {maxval}")));
        }
        raw.push(v);
    }
    if raw.len() != w * h {
        return Err(missing());
    }
    if let Some(extra) = it.next() {
        return Err(format_error(extra.0, "trailing data after the last pixel"));
    }
    LabelMap::from_arbitrary(grid, &raw)
}

fn parse_label_map_3d(text: &str) -> Result<LabelMap> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let dims: Vec<usize> = header
        .trim_start_matches("# labels3d")
        .split_whitespace()
        .take(3)
        .map(|t| t.parse().map_err(|_| format_error(0, "invalid 3D label header")))
        .collect::<Result<_>>()?;
    let grid = Grid::new(dims).map_err(|_| format_error(0, "invalid 3D label header"))?;
    let mut raw: Vec<Option<u64>> = vec![None; grid.voxel_count()];
    let body_start = header.len() + 1;
    for (offset, line) in tokens_by_line(&text[body_start.min(text.len())..], body_start) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() || f == ["x", "y", "z", "label"] {
            continue;
        }
        if f.len() != 4 {
            return Err(format_error(offset, "expected \"x y z label\""));
        }
        let nums: Vec<u64> = f
            .iter()
            .map(|t| t.parse().map_err(|_| format_error(offset, format!("invalid number {t:?}"))))
            .collect::<Result<_>>()?;
        let c = [nums[0] as usize, nums[1] as usize, nums[2] as usize];
        if c.iter().zip(grid.dims()).any(|(&x, &d)| x >= d) {
            return Err(format_error(offset, "coordinates outside the grid"));
        }
        let v = grid.index(c);
        if raw[v].replace(nums[3]).is_some() {
            return Err(format_error(offset, "voxel listed twice"));
        }
    }
    let raw: Vec<u64> =
        raw.into_iter().collect::<Option<_>>().ok_or_else(|| format_error(text.len(), "some voxels have no label"))?;
    LabelMap::from_arbitrary(grid, &raw)
}

fn tokens_by_line(text: &str, base: usize) -> Vec<(usize, &str)> {
    let mut offset = base;
    text.split_inclusive('\n')
        .map(|l| {
            let o = offset;
            offset += l.len();
            (o, l)
        })
        .collect()
}

pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    parse_label_map(&std::fs::read_to_string(path)?)
}

pub fn trace_csv(trace: &[MergeRecord]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:e},{:e},{:e},{}",
            r.iteration,
            r.phase.as_str(),
            r.id_a,
            r.id_b,
            r.new_id,
            r.p_raw,
            r.p_corrected,
            r.control,
            r.ell
        );
    }
    s
}

/// One row per time point: `time,cluster_0,...`.
pub fn mean_curves_csv(seg: &Segmentation) -> String {
    let k = seg.final_clusters;
    let mut s = String::from("time");
    for l in 0..k {
        let _ = write!(s, ",cluster_{l}");
    }
    s.push('\n');
    for (j, t) in seg.times.iter().enumerate() {
        let _ = write!(s, "{t}");
        for l in 0..k {
            let _ = write!(s, ",{}", seg.mean_curve(l)[j]);
        }
        s.push('\n');
    }
    s
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("lower,upper,count\n");
    let _ = writeln!(s, "-inf,{},{}", h.edge(0), h.underflow);
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(s, "{},{},{c}", h.edge(i), h.edge(i + 1));
    }
    let _ = writeln!(s, "{},inf,{}", h.edge(h.counts.len()), h.overflow);
    s
}
