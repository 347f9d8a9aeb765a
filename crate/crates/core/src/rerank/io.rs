use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{RerankError, Result};

const HEADER: &str = "user\titem\tscore\trank";

/// One line of a per-user ranked candidate file. Ranks start at 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedRow {
    pub user: usize,
    pub item: usize,
    pub score: f64,
    pub rank: usize,
}

pub fn write_ranked(path: &Path, rows: &[RankedRow]) -> Result<()> {
    let mut s = String::with_capacity(rows.len() * 32);
    s.push_str(HEADER);
    s.push('\n');
    for r in rows {
        // `{:?}` on f64 prints the shortest string that round-trips.
        let _ = writeln!(s, "{}\t{}\t{:?}\t{}", r.user, r.item, r.score, r.rank);
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_ranked(path: &Path) -> Result<Vec<RankedRow>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if (k == 0 && line == HEADER) || line.is_empty() {
            continue;
        }
        let bad = |msg: &str| RerankError::Parse {
            line: k + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad("expected user, item, score, rank"));
        }
        out.push(RankedRow {
            user: f[0].parse().map_err(|_| bad("bad user"))?,
            item: f[1].parse().map_err(|_| bad("bad item"))?,
            score: f[2].parse().map_err(|_| bad("bad score"))?,
            rank: f[3].parse().map_err(|_| bad("bad rank"))?,
        });
    }
    Ok(out)
}
