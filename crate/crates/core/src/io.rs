//! Plain-text block file format shared by model checkpoints and RNN weight
//! files: a header line, `key=value` scalar lines, then named matrix blocks.
//!
//! ```text
//! KEFMODEL v1 resnet
//! d_in=1
//! ...
//! BLOCK w1 100 100
//! 1.2339081...e-2 ...
//! ```
//!
//! Values are written with 17 significant digits so an f64 round-trips
//! bit-exactly.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug)]
pub struct BlockFile {
    pub header: String,
    pub scalars: Vec<(String, String)>,
    pub blocks: Vec<Block>,
}

#[derive(Debug)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major values, length rows*cols.
    pub data: Vec<f64>,
}

/// Formats an f64 with 17 significant digits (round-trip exact).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl BlockFile {
    pub fn new(header: &str) -> Self {
        BlockFile { header: header.to_string(), scalars: Vec::new(), blocks: Vec::new() }
    }

    pub fn push_scalar(&mut self, key: &str, value: String) {
        self.scalars.push((key.to_string(), value));
    }

    pub fn push_block(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
        assert_eq!(data.len(), rows * cols, "block {name} size mismatch");
        self.blocks.push(Block { name: name.to_string(), rows, cols, data });
    }

    pub fn scalar(&self, key: &str) -> Result<&str> {
        self.scalars
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("missing scalar field {key}")))
    }

    pub fn scalar_f64(&self, key: &str) -> Result<f64> {
        let s = self.scalar(key)?;
        s.parse().map_err(|_| Error::InvalidInput(format!("field {key}={s} is not a number")))
    }

    pub fn scalar_usize(&self, key: &str) -> Result<usize> {
        let s = self.scalar(key)?;
        s.parse().map_err(|_| Error::InvalidInput(format!("field {key}={s} is not an integer")))
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::InvalidInput(format!("missing block {name}")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.header);
        s.push('\n');
        for (k, v) in &self.scalars {
            let _ = writeln!(s, "{k}={v}");
        }
        for b in &self.blocks {
            let _ = writeln!(s, "BLOCK {} {} {}", b.name, b.rows, b.cols);
            for r in 0..b.rows {
                let row = &b.data[r * b.cols..(r + 1) * b.cols];
                let line: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<BlockFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn from_text(text: &str, path: &str) -> Result<BlockFile> {
        let err = |line: usize, msg: String| Error::Parse { path: path.to_string(), line, msg };
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((_, l)) => break l.trim().to_string(),
                None => return Err(err(0, "empty file".into())),
            }
        };
        let mut file = BlockFile::new(&header);
        let mut pending: Option<(Block, usize, usize)> = None; // block, fill pos, decl line
        for (i, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some((ref mut blk, ref mut pos, decl)) = pending {
                for tok in line.split_whitespace() {
                    if *pos >= blk.data.len() {
                        return Err(err(i + 1, format!("extra values in block {}", blk.name)));
                    }
                    blk.data[*pos] = tok.parse::<f64>().map_err(|_| {
                        err(i + 1, format!("bad number {tok:?} in block {}", blk.name))
                    })?;
                    *pos += 1;
                }
                if *pos == blk.data.len() {
                    let (blk, _, _) = pending.take().unwrap();
                    file.blocks.push(blk);
                }
                let _ = decl;
                continue;
            }
            if let Some(rest) = line.strip_prefix("BLOCK ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(err(i + 1, "BLOCK wants: name rows cols".into()));
                }
                let rows: usize =
                    parts[1].parse().map_err(|_| err(i + 1, "bad row count".into()))?;
                let cols: usize =
                    parts[2].parse().map_err(|_| err(i + 1, "bad col count".into()))?;
                let blk = Block {
                    name: parts[0].to_string(),
                    rows,
                    cols,
                    data: vec![0.0; rows * cols],
                };
                if rows * cols == 0 {
                    return Err(err(i + 1, format!("empty block {}", parts[0])));
                }
                pending = Some((blk, 0, i + 1));
            } else if let Some(eq) = line.find('=') {
                file.scalars.push((line[..eq].to_string(), line[eq + 1..].to_string()));
            } else {
                return Err(err(i + 1, format!("unexpected line {line:?}")));
            }
        }
        if let Some((blk, pos, decl)) = pending {
            return Err(err(
                decl,
                format!("block {} truncated: {} of {} values", blk.name, pos, blk.data.len()),
            ));
        }
        Ok(file)
    }
}
