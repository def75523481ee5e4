//! Text pose lists: one camera-to-world pose per line as 12 row-major
//! numbers (`r00 r01 r02 tx r10 ... tz`), separated by spaces or commas.
//! Blank lines and `#` comments are skipped.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use splatloop::Pose;

pub fn parse_pose(text: &str) -> Result<Pose> {
    let nums: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("`{s}` is not a number")))
        .collect::<Result<_>>()?;
    if nums.len() != 12 {
        bail!("a pose needs 12 numbers, got {}", nums.len());
    }
    Ok(Pose::from_row_major(&nums)?)
}

pub fn parse_pose_list(text: &str) -> Result<Vec<Pose>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i, line.split('#').next().unwrap_or("").trim()))
        .filter(|(_, line)| !line.is_empty())
        .map(|(i, line)| parse_pose(line).with_context(|| format!("line {}", i + 1)))
        .collect()
}

pub fn read_pose_list(path: &Path) -> Result<Vec<Pose>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_pose_list(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn format_pose_list(poses: &[Pose]) -> String {
    let mut out = String::new();
    for p in poses {
        let nums: Vec<String> = p.to_row_major().iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", nums.join(" ")).expect("writing to a string");
    }
    out
}
