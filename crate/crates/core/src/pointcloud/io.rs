//! Point-cloud file formats.
//!
//! Text: one point per line, whitespace-separated reals
//! `x y z [extra channels...] [label]`; `#` starts a comment.
//!
//! Binary (`.spnc`): magic `SPNC`, u32 version = 1, u32 N, u32 F,
//! u8 label mode (0 none, 1 per-cloud, 2 per-point), N×F little-endian f64
//! row-major, then the labels as little-endian i64.

use std::fs;
use std::path::Path;

use super::{Labels, PointCloud};
use crate::error::{Result, SpnError};

pub const CLOUD_MAGIC: &[u8; 4] = b"SPNC";
pub const CLOUD_VERSION: u32 = 1;

/// Whether the last text column is a per-point integer label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextLabels {
    None,
    PerPoint,
}

pub fn parse_text(src: &str, labels: TextLabels, origin: &str) -> Result<PointCloud> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    SpnError::format(origin, format!("line {}: bad number {tok:?}", lineno + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(SpnError::format(
                    origin,
                    format!(
                        "line {}: {} columns, expected {}",
                        lineno + 1,
                        row.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(SpnError::format(origin, "no points"));
    }
    let cols = rows[0].len();
    let f = match labels {
        TextLabels::None => cols,
        TextLabels::PerPoint => cols.saturating_sub(1),
    };
    if f < 3 {
        return Err(SpnError::format(
            origin,
            format!("{cols} columns leave fewer than 3 coordinate channels"),
        ));
    }
    let n = rows.len();
    let mut data = Vec::with_capacity(n * f);
    let mut lab = Vec::new();
    for row in &rows {
        data.extend_from_slice(&row[..f]);
        if labels == TextLabels::PerPoint {
            let v = row[f];
            if v.fract() != 0.0 || !v.is_finite() {
                return Err(SpnError::format(
                    origin,
                    format!("label {v} is not an integer"),
                ));
            }
            lab.push(v as i64);
        }
    }
    let cloud = PointCloud::new(n, f, data).map_err(|e| SpnError::format(origin, e.to_string()))?;
    match labels {
        TextLabels::None => Ok(cloud),
        TextLabels::PerPoint => cloud.with_labels(Labels::PerPoint(lab)),
    }
}

/// Text rendering. Per-cloud labels are written as a constant label column.
pub fn format_text(cloud: &PointCloud) -> String {
    let mut s = String::new();
    for i in 0..cloud.len() {
        let mut cols: Vec<String> = cloud.row(i).iter().map(|v| format!("{v:?}")).collect();
        match cloud.labels() {
            Labels::None => {}
            Labels::PerCloud(l) => cols.push(l.to_string()),
            Labels::PerPoint(l) => cols.push(l[i].to_string()),
        }
        s.push_str(&cols.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_text(path: &Path, labels: TextLabels) -> Result<PointCloud> {
    let src = fs::read_to_string(path).map_err(|e| SpnError::io(path, e))?;
    parse_text(&src, labels, &path.display().to_string())
}

pub fn write_text(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, format_text(cloud)).map_err(|e| SpnError::io(path, e))
}

pub fn encode_binary(cloud: &PointCloud) -> Vec<u8> {
    let mut b = Vec::with_capacity(17 + cloud.data().len() * 8);
    b.extend_from_slice(CLOUD_MAGIC);
    b.extend_from_slice(&CLOUD_VERSION.to_le_bytes());
    b.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    b.extend_from_slice(&(cloud.channels() as u32).to_le_bytes());
    let mode: u8 = match cloud.labels() {
        Labels::None => 0,
        Labels::PerCloud(_) => 1,
        Labels::PerPoint(_) => 2,
    };
    b.push(mode);
    for v in cloud.data() {
        b.extend_from_slice(&v.to_le_bytes());
    }
    match cloud.labels() {
        Labels::None => {}
        Labels::PerCloud(l) => b.extend_from_slice(&l.to_le_bytes()),
        Labels::PerPoint(ls) => ls
            .iter()
            .for_each(|l| b.extend_from_slice(&l.to_le_bytes())),
    }
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(SpnError::format(self.origin, "truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_binary(buf: &[u8], origin: &str) -> Result<PointCloud> {
    let mut r = Reader {
        buf,
        pos: 0,
        origin,
    };
    if r.take(4)? != CLOUD_MAGIC {
        return Err(SpnError::format(origin, "bad magic, expected SPNC"));
    }
    let version = r.u32()?;
    if version != CLOUD_VERSION {
        return Err(SpnError::format(
            origin,
            format!("unsupported version {version}"),
        ));
    }
    let n = r.u32()? as usize;
    let f = r.u32()? as usize;
    let mode = r.take(1)?[0];
    let data = (0..n * f).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let labels = match mode {
        0 => Labels::None,
        1 => Labels::PerCloud(r.i64()?),
        2 => Labels::PerPoint((0..n).map(|_| r.i64()).collect::<Result<_>>()?),
        m => return Err(SpnError::format(origin, format!("bad label mode {m}"))),
    };
    if r.pos != buf.len() {
        return Err(SpnError::format(origin, "trailing bytes"));
    }
    PointCloud::new(n, f, data)
        .and_then(|c| c.with_labels(labels))
        .map_err(|e| SpnError::format(origin, e.to_string()))
}

pub fn read_binary(path: &Path) -> Result<PointCloud> {
    let buf = fs::read(path).map_err(|e| SpnError::io(path, e))?;
    decode_binary(&buf, &path.display().to_string())
}

pub fn write_binary(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_binary(cloud)).map_err(|e| SpnError::io(path, e))
}

/// Reads a cloud by extension: `.spnc` binary, anything else text with a
/// per-point label column.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("spnc") => read_binary(path),
        _ => read_text(path, TextLabels::PerPoint),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn text_with_comments_and_labels() {
        let src = "# header\n0 0 0 1\n1.5 2 3 # trailing\n";
        assert!(parse_text(src, TextLabels::PerPoint, "mem").is_err());
        let src = "# header\n0 0 0 1\n1.5 2 3 2 # trailing\n\n";
        let c = parse_text(src, TextLabels::PerPoint, "mem").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.position(1), [1.5, 2.0, 3.0]);
        assert_eq!(c.labels(), &Labels::PerPoint(vec![1, 2]));
        let c = parse_text("1 2 3 4 5\n", TextLabels::None, "mem").unwrap();
        assert_eq!(c.channels(), 5);
    }

    #[test]
    fn binary_rejects_garbage() {
        assert!(decode_binary(b"NOPE", "mem").is_err());
        let c = PointCloud::from_positions(&[[1.0, 2.0, 3.0]]).unwrap();
        let mut b = encode_binary(&c);
        b.push(0);
        assert!(decode_binary(&b, "mem").is_err());
        b.truncate(b.len() - 9);
        assert!(decode_binary(&b, "mem").is_err());
    }

    #[test]
    fn binary_header_layout() {
        let c = PointCloud::from_positions(&[[1.0, 2.0, 3.0]])
            .unwrap()
            .with_labels(Labels::PerCloud(-4))
            .unwrap();
        let b = encode_binary(&c);
        assert_eq!(&b[..4], b"SPNC");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &3u32.to_le_bytes());
        assert_eq!(b[16], 1);
        assert_eq!(&b[17..25], &1.0f64.to_le_bytes());
        assert_eq!(&b[41..49], &(-4i64).to_le_bytes());
        assert_eq!(b.len(), 49);
    }

    proptest! {
        #[test]
        fn binary_and_text_round_trip(
            pts in prop::collection::vec(prop::array::uniform4(-1e6f64..1e6), 1..40),
            per_point in any::<bool>(),
        ) {
            let n = pts.len();
            let data: Vec<f64> = pts.iter().flat_map(|p| p.iter().copied()).collect();
            let labels = if per_point {
                Labels::PerPoint((0..n as i64).map(|i| i * 3 - 7).collect())
            } else {
                Labels::None
            };
            let c = PointCloud::new(n, 4, data).unwrap().with_labels(labels).unwrap();
            let bin = decode_binary(&encode_binary(&c), "mem").unwrap();
            prop_assert_eq!(&bin, &c);
            let mode = if per_point { TextLabels::PerPoint } else { TextLabels::None };
            let txt = parse_text(&format_text(&c), mode, "mem").unwrap();
            prop_assert_eq!(&txt, &c);
        }
    }
}
