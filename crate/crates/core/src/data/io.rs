use std::fmt::Write as _;
use std::path::Path;

use super::{BehaviorSchedule, OfflineDataset, Transition};
use crate::error::{Error, Result};

const MAGIC: &str = "# gopo-dataset v1";

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

impl OfflineDataset {
    /// Text form: a header line followed by one `k h s a r s_next` record per
    /// transition, rewards written with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let schedule = serde_json::to_string(&self.schedule).expect("schedule serializes");
        writeln!(
            out,
            "{MAGIC} K={} H={} S={} A={} seed={} fingerprint={} schedule={schedule}",
            self.episodes.len(),
            self.horizon,
            self.num_states,
            self.num_actions,
            self.seed,
            self.mdp_fingerprint
        )
        .unwrap();
        for (k, episode) in self.episodes.iter().enumerate() {
            for (h, z) in episode.iter().enumerate() {
                writeln!(out, "{k} {h} {} {} {:.16e} {}", z.s, z.a, z.r, z.s_next).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
        let rest = header
            .strip_prefix(MAGIC)
            .ok_or_else(|| parse_err(1, "not a gopo dataset (bad magic)"))?;
        let (fields, schedule) = rest
            .split_once(" schedule=")
            .ok_or_else(|| parse_err(1, "header lacks a schedule"))?;
        let get = |key: &str| -> Result<String> {
            fields
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .map(str::to_owned)
                .ok_or_else(|| parse_err(1, format!("header lacks {key}")))
        };
        let num = |key: &str, v: String| -> Result<usize> {
            v.parse()
                .map_err(|_| parse_err(1, format!("{key} is not an integer")))
        };
        let k = num("K", get("K")?)?;
        let horizon = num("H", get("H")?)?;
        let num_states = num("S", get("S")?)?;
        let num_actions = num("A", get("A")?)?;
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|_| parse_err(1, "seed is not an integer"))?;
        let mdp_fingerprint = get("fingerprint")?;
        let schedule: BehaviorSchedule =
            serde_json::from_str(schedule).map_err(|e| parse_err(1, format!("schedule: {e}")))?;

        let mut episodes: Vec<Vec<Transition>> = Vec::with_capacity(k);
        let expected = k * horizon;
        let mut seen = 0;
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 6 {
                return Err(parse_err(
                    lineno,
                    format!("expected 6 fields, found {}", parts.len()),
                ));
            }
            let int = |i: usize| -> Result<usize> {
                parts[i]
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("field {} is not an index", i + 1)))
            };
            let (ek, eh) = (int(0)?, int(1)?);
            let (want_k, want_h) = if horizon == 0 {
                (0, 0)
            } else {
                (seen / horizon, seen % horizon)
            };
            if seen >= expected || (ek, eh) != (want_k, want_h) {
                return Err(parse_err(
                    lineno,
                    format!("expected record k={want_k} h={want_h}, found k={ek} h={eh}"),
                ));
            }
            let r: f64 = parts[4]
                .parse()
                .map_err(|_| parse_err(lineno, "reward is not a number"))?;
            let z = Transition {
                s: int(2)?,
                a: int(3)?,
                r,
                s_next: int(5)?,
            };
            if eh == 0 {
                episodes.push(Vec::with_capacity(horizon));
            }
            episodes[ek].push(z);
            seen += 1;
        }
        if seen != expected {
            let next_line = text.lines().count() + 1;
            return Err(parse_err(
                next_line,
                format!("file ends after {seen} of {expected} transitions"),
            ));
        }
        let dataset = OfflineDataset {
            horizon,
            num_states,
            num_actions,
            episodes,
            schedule,
            seed,
            mdp_fingerprint,
        };
        dataset.validate()?;
        dataset
            .schedule
            .validate(horizon, num_states, num_actions)?;
        Ok(dataset)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
