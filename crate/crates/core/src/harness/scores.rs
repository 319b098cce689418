//! The `scores.csv` format.
//!
//! One row per case and region (WT, ET, TC, then `avg`), followed by a
//! comment block with the per-region means and the metric conventions:
//!
//! ```text
//! case_id,region,dice,hd95,sentinel_flag
//! case_0003,WT,0.9523809523809523,1,0
//! ...
//! # summary,cases=10
//! # region,dice_mean,hd95_mean,hd95_excluded
//! # WT,0.951234,1.118034,0
//! ...
//! # conventions,empty_dice=1,hd95_sentinel=373.13,percentile=95
//! ```
//!
//! Per-case values use the shortest representation that parses back to the
//! same `f64`, so reading a file and writing it again is byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{aggregate, CaseScores, MetricConventions, RegionScore, Summary};
use crate::volume::Region;

pub const SCORES_FILE: &str = "scores.csv";
const HEADER: &str = "case_id,region,dice,hd95,sentinel_flag";
const AVG: &str = "avg";

/// Scores of one evaluated case.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCase {
    pub id: String,
    pub scores: CaseScores,
}

/// Contents of a scores file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub cases: Vec<ScoredCase>,
    pub conventions: MetricConventions,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

impl ScoreTable {
    pub fn summary(&self) -> Result<Summary> {
        aggregate(&self.cases.iter().map(|c| c.scores.clone()).collect::<Vec<_>>())
    }

    pub fn to_csv(&self) -> Result<String> {
        let summary = self.summary()?;
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for case in &self.cases {
            for r in &case.scores.regions {
                writeln!(out, "{},{},{},{},{}", case.id, r.region, r.dice, r.hd95, u8::from(r.sentinel)).unwrap();
            }
            let all_sentinel = case.scores.regions.iter().all(|r| r.sentinel);
            writeln!(
                out,
                "{},{AVG},{},{},{}",
                case.id,
                case.scores.dice_avg,
                case.scores.hd95_avg,
                u8::from(all_sentinel)
            )
            .unwrap();
        }
        writeln!(out, "# summary,cases={}", summary.cases).unwrap();
        out.push_str("# region,dice_mean,hd95_mean,hd95_excluded\n");
        for r in &summary.regions {
            writeln!(out, "# {},{:.6},{},{}", r.region, r.dice, opt(r.hd95), r.hd95_excluded).unwrap();
        }
        let excluded: usize = summary.regions.iter().map(|r| r.hd95_excluded).sum();
        writeln!(out, "# {AVG},{:.6},{},{excluded}", summary.dice_avg, opt(summary.hd95_avg)).unwrap();
        let c = &self.conventions;
        writeln!(
            out,
            "# conventions,empty_dice={},hd95_sentinel={},percentile={}",
            c.empty_dice, c.hd95_sentinel, c.percentile
        )
        .unwrap();
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|reason| Error::Malformed {
            path: path.to_owned(),
            reason,
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err("missing header".into());
        }
        let mut cases: Vec<ScoredCase> = Vec::new();
        let mut pending: Vec<RegionScore> = Vec::new();
        let mut conventions = None;
        for (n, line) in lines.enumerate() {
            if let Some(comment) = line.strip_prefix("# conventions,") {
                conventions = Some(parse_conventions(comment)?);
                continue;
            }
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(format!("line {}: expected 5 fields", n + 2));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", n + 2));
            let flag = match f[4] {
                "0" => false,
                "1" => true,
                other => return Err(format!("line {}: bad sentinel flag {other:?}", n + 2)),
            };
            if f[1] == AVG {
                if pending.len() != Region::REPORT_ORDER.len() {
                    return Err(format!("line {}: avg row before all regions", n + 2));
                }
                cases.push(ScoredCase {
                    id: f[0].to_string(),
                    scores: CaseScores {
                        regions: std::mem::take(&mut pending),
                        dice_avg: num(f[2])?,
                        hd95_avg: num(f[3])?,
                    },
                });
            } else {
                let region = Region::from_short_name(f[1]).ok_or_else(|| format!("line {}: bad region", n + 2))?;
                if region != Region::REPORT_ORDER[pending.len() % 3] {
                    return Err(format!("line {}: regions out of order", n + 2));
                }
                pending.push(RegionScore {
                    region,
                    dice: num(f[2])?,
                    hd95: num(f[3])?,
                    sentinel: flag,
                });
            }
        }
        if !pending.is_empty() {
            return Err("trailing rows without an avg row".into());
        }
        Ok(Self {
            cases,
            conventions: conventions.ok_or("missing conventions line")?,
        })
    }
}

fn parse_conventions(s: &str) -> std::result::Result<MetricConventions, String> {
    let mut c = MetricConventions::default();
    for kv in s.split(',') {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad convention {kv:?}"))?;
        let v: f64 = v.parse().map_err(|e| format!("{k}: {e}"))?;
        match k {
            "empty_dice" => c.empty_dice = v,
            "hd95_sentinel" => c.hd95_sentinel = v,
            "percentile" => c.percentile = v,
            _ => return Err(format!("unknown convention {k:?}")),
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::HD95_SENTINEL;

    fn case(id: &str, d: f64, h: f64) -> ScoredCase {
        let regions: Vec<RegionScore> = Region::REPORT_ORDER
            .iter()
            .enumerate()
            .map(|(i, &region)| RegionScore {
                region,
                dice: d / (i + 1) as f64,
                hd95: if i == 2 { HD95_SENTINEL } else { h },
                sentinel: i == 2,
            })
            .collect();
        ScoredCase {
            id: id.into(),
            scores: CaseScores {
                dice_avg: regions.iter().map(|r| r.dice).sum::<f64>() / 3.0,
                hd95_avg: h,
                regions,
            },
        }
    }

    fn table() -> ScoreTable {
        ScoreTable {
            cases: vec![case("a", 0.9, 1.5), case("b", 0.1 + 0.2, 2.0)],
            conventions: MetricConventions::default(),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let t = table();
        let text = t.to_csv().unwrap();
        let back = ScoreTable::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv().unwrap(), text);
    }

    #[test]
    fn layout() {
        let text = table().to_csv().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], HEADER);
        assert_eq!(lines[1], "a,WT,0.9,1.5,0");
        assert_eq!(lines[3], "a,TC,0.3,373.13,1");
        assert_eq!(lines[4], "a,avg,0.55,1.5,0");
        assert!(lines.contains(&"# TC,0.200000,NA,2"));
        assert_eq!(*lines.last().unwrap(), "# conventions,empty_dice=1,hd95_sentinel=373.13,percentile=95");
    }

    #[test]
    fn rejects_garbage() {
        assert!(ScoreTable::parse("nope\n").is_err());
        assert!(ScoreTable::parse(&format!("{HEADER}\na,WT,1,1,0\n")).is_err());
        assert!(ScoreTable::parse(&format!("{HEADER}\na,XX,1,1,0\n")).is_err());
        let no_conv: String = table().to_csv().unwrap().lines().filter(|l| !l.contains("conventions")).collect::<Vec<_>>().join("\n");
        assert!(ScoreTable::parse(&no_conv).is_err());
    }
}
