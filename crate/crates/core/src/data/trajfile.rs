//! Whitespace-separated `frame agent x y` trajectory files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tracing::warn;

use crate::error::{Error, Result};

/// One agent's observations sorted by frame. Frames may have gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub agent_id: i64,
    pub frames: Vec<i64>,
    pub points: Vec<[f64; 2]>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn integral(field: &str, what: &str, source: &str, line: usize) -> Result<i64> {
    let err = |msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let v: f64 = field.parse().map_err(|_| err(format!("cannot parse {what} '{field}'")))?;
    if !v.is_finite() || v.fract() != 0.0 {
        return Err(err(format!("{what} '{field}' is not an integer")));
    }
    Ok(v as i64)
}

/// Parses file contents; `source` names the input in diagnostics.
pub fn parse_trajectories(text: &str, source: &str) -> Result<Vec<Track>> {
    let mut by_agent: BTreeMap<i64, BTreeMap<i64, [f64; 2]>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields (frame agent x y), found {}", fields.len())));
        }
        let frame = integral(fields[0], "frame", source, line)?;
        let agent = integral(fields[1], "agent id", source, line)?;
        let mut xy = [0.0f64; 2];
        for (slot, f) in xy.iter_mut().zip(&fields[2..]) {
            *slot = f.parse().map_err(|_| err(format!("cannot parse coordinate '{f}'")))?;
            if !slot.is_finite() {
                return Err(err(format!("non-finite coordinate '{f}'")));
            }
        }
        if by_agent.entry(agent).or_default().insert(frame, xy).is_some() {
            return Err(err(format!("duplicate observation for agent {agent} at frame {frame}")));
        }
    }
    if by_agent.is_empty() {
        warn!("{source}: no observations");
    }
    Ok(by_agent
        .into_iter()
        .map(|(agent_id, obs)| {
            let (frames, points) = obs.into_iter().unzip();
            Track { agent_id, frames, points }
        })
        .collect())
}

pub fn parse_trajectory_file(path: &Path) -> Result<Vec<Track>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_trajectories(&fs::read_to_string(path)?, &path.display().to_string())
}

/// Formats tracks in frame order, one observation per line.
pub fn format_trajectories(tracks: &[Track]) -> String {
    let mut rows: Vec<(i64, i64, [f64; 2])> = tracks
        .iter()
        .flat_map(|t| t.frames.iter().zip(&t.points).map(move |(f, p)| (*f, t.agent_id, *p)))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut out = String::new();
    for (f, a, p) in rows {
        // `{:?}` prints the shortest repr that round-trips exactly.
        let _ = writeln!(out, "{f}\t{a}\t{:?}\t{:?}", p[0], p[1]);
    }
    out
}

/// Smallest positive frame increment within any track, or 1 if undefined.
pub fn frame_step(tracks: &[Track]) -> i64 {
    tracks
        .iter()
        .flat_map(|t| t.frames.windows(2).map(|w| w[1] - w[0]))
        .filter(|d| *d > 0)
        .min()
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_eth_line() {
        let tracks = parse_trajectories("780 1.0 8.46 3.59\n", "t").unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].agent_id, 1);
        assert_eq!(tracks[0].frames, vec![780]);
        assert_eq!(tracks[0].points, vec![[8.46, 3.59]]);
    }

    #[test]
    fn empty_input_is_ok() {
        assert!(parse_trajectories("", "empty").unwrap().is_empty());
        assert!(parse_trajectories("\n  \n", "blank").unwrap().is_empty());
    }

    #[test]
    fn order_of_lines_does_not_matter() {
        let sorted = "0 1 0.0 0.0\n10 1 1.0 0.0\n10 2 5.0 5.0\n20 1 2.0 0.0\n";
        let shuffled = "20 1 2.0 0.0\n10 2 5.0 5.0\n0 1 0.0 0.0\n10 1 1.0 0.0\n";
        assert_eq!(parse_trajectories(sorted, "a").unwrap(), parse_trajectories(shuffled, "b").unwrap());
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let e = parse_trajectories("0 1 0 0\n10 1 x 0\n", "bad.txt").unwrap_err();
        assert!(e.to_string().starts_with("bad.txt:2:"), "{e}");
        let e = parse_trajectories("0 1 0 0\n0 1 1 1\n", "dup.txt").unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
        assert!(parse_trajectories("0 1 0\n", "short").is_err());
        assert!(parse_trajectories("0.5 1 0 0\n", "frac").is_err());
    }

    #[test]
    fn format_round_trips() {
        let text = "0\t1\t0.1\t-2.5\n10\t1\t0.30000000000000004\t1e-7\n10\t2\t3.0\t4.0\n";
        let tracks = parse_trajectories(text, "x").unwrap();
        assert_eq!(format_trajectories(&tracks), text);
        assert_eq!(frame_step(&tracks), 10);
    }
}
