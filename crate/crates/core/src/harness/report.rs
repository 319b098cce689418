use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::config::Arm;
use crate::harness::run::{RunManifest, MANIFEST_FILE};
use crate::harness::scores::{ScoreTable, SCORES_FILE};
use crate::metrics::{MetricConventions, Summary};
use crate::volume::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            _ => Err(Error::InvalidConfig(format!("unknown report format {s:?}"))),
        }
    }
}

/// Summary of one arm on one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldRow {
    pub arm: String,
    pub fold: String,
    pub summary: Summary,
    pub nesting_violations: Option<usize>,
}

/// Fold-averaged means of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub folds: usize,
    /// WT, ET, TC, then the average.
    pub dice: [f64; 4],
    pub hd95: [Option<f64>; 4],
}

/// Relative improvement of an arm over the baseline, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct Improvement {
    pub arm: String,
    /// Per fold, in fold order: (fold, dice %, hd95 %).
    pub per_fold: Vec<(String, f64, Option<f64>)>,
    /// Change of the fold-averaged means.
    pub dice_of_means: f64,
    pub hd95_of_means: Option<f64>,
    /// Mean of the per-fold changes.
    pub dice_mean_of_folds: f64,
    pub hd95_mean_of_folds: Option<f64>,
}

/// Percentage change from `base` to `value`; positive means better.
pub fn relative_improvement(base: f64, value: f64, lower_is_better: bool) -> f64 {
    let delta = if lower_is_better { base - value } else { value - base };
    100.0 * delta / base
}

/// Collected results of one or more runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<FoldRow>,
    pub conventions: MetricConventions,
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(SCORES_FILE).is_file() {
        out.push(dir.to_owned());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries.into_iter().filter(|p| p.is_dir()) {
        find_runs(&path, out)?;
    }
    Ok(())
}

fn name_of(path: Option<&Path>) -> String {
    path.and_then(|p| p.file_name()).map_or_else(|| "?".into(), |n| n.to_string_lossy().into_owned())
}

fn arm_rank(arm: &str) -> (usize, String) {
    let rank = Arm::ALL.iter().position(|a| a.name() == arm).unwrap_or(Arm::ALL.len());
    (rank, arm.to_string())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn region_values(s: &Summary) -> ([f64; 4], [Option<f64>; 4]) {
    let mut dice = [0.0; 4];
    let mut hd = [None; 4];
    for (i, &region) in Region::REPORT_ORDER.iter().enumerate() {
        dice[i] = s.get(region).dice;
        hd[i] = s.get(region).hd95;
    }
    dice[3] = s.dice_avg;
    hd[3] = s.hd95_avg;
    (dice, hd)
}

fn fmt_dice(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn fmt_hd(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.2}"))
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.2}%"))
}

impl Report {
    /// Reads every run below the given directories. A run is any directory
    /// holding a `scores.csv`; its arm and fold come from `manifest.json`
    /// when present and from the directory names otherwise.
    pub fn load(run_dirs: &[PathBuf]) -> Result<Self> {
        let mut found = Vec::new();
        for dir in run_dirs {
            find_runs(dir, &mut found)?;
        }
        if found.is_empty() {
            return Err(Error::Empty("run set"));
        }
        found.sort();
        found.dedup();
        let mut rows = Vec::new();
        let mut conventions: Option<(MetricConventions, PathBuf)> = None;
        for dir in found {
            let table = ScoreTable::read(&dir.join(SCORES_FILE))?;
            match &conventions {
                None => conventions = Some((table.conventions, dir.clone())),
                Some((c, first)) if *c != table.conventions => {
                    return Err(Error::InconsistentConventions(format!(
                        "{} uses {:?} but {} uses {:?}",
                        first.display(),
                        c,
                        dir.display(),
                        table.conventions
                    )))
                }
                Some(_) => {}
            }
            let manifest_path = dir.join(MANIFEST_FILE);
            let (arm, fold, nesting) = if manifest_path.is_file() {
                let m = RunManifest::read(&manifest_path)?;
                (
                    m.arm.name(),
                    crate::harness::fold_name(m.fold),
                    Some(m.nesting_violations.values().sum()),
                )
            } else {
                (name_of(dir.parent()), name_of(Some(&dir)), None)
            };
            rows.push(FoldRow {
                arm,
                fold,
                summary: table.summary()?,
                nesting_violations: nesting,
            });
        }
        rows.sort_by(|a, b| (&a.fold, arm_rank(&a.arm)).cmp(&(&b.fold, arm_rank(&b.arm))));
        Ok(Self {
            rows,
            conventions: conventions.expect("nonempty").0,
        })
    }

    fn arms(&self) -> Vec<String> {
        let mut arms: Vec<String> = self.rows.iter().map(|r| r.arm.clone()).collect();
        arms.sort_by_key(|a| arm_rank(a));
        arms.dedup();
        arms
    }

    pub fn arm_summaries(&self) -> Vec<ArmSummary> {
        self.arms()
            .into_iter()
            .map(|arm| {
                let rows: Vec<_> = self.rows.iter().filter(|r| r.arm == arm).map(|r| region_values(&r.summary)).collect();
                let mut dice = [0.0; 4];
                let mut hd95 = [None; 4];
                for i in 0..4 {
                    dice[i] = mean(rows.iter().map(|r| r.0[i])).expect("arm has rows");
                    hd95[i] = mean(rows.iter().filter_map(|r| r.1[i]));
                }
                ArmSummary {
                    arm,
                    folds: rows.len(),
                    dice,
                    hd95,
                }
            })
            .collect()
    }

    /// Improvement of each non-baseline arm over the baseline on the
    /// folds both have results for.
    pub fn improvements(&self) -> Vec<Improvement> {
        let base_name = Arm::Baseline.name();
        let base_rows: Vec<&FoldRow> = self.rows.iter().filter(|r| r.arm == base_name).collect();
        self.arms()
            .into_iter()
            .filter(|a| *a != base_name)
            .filter_map(|arm| {
                let pairs: Vec<(&FoldRow, &FoldRow)> = self
                    .rows
                    .iter()
                    .filter(|r| r.arm == arm)
                    .filter_map(|r| base_rows.iter().find(|b| b.fold == r.fold).map(|b| (*b, r)))
                    .collect();
                if pairs.is_empty() {
                    return None;
                }
                let per_fold: Vec<(String, f64, Option<f64>)> = pairs
                    .iter()
                    .map(|(b, r)| {
                        let hd = match (b.summary.hd95_avg, r.summary.hd95_avg) {
                            (Some(x), Some(y)) => Some(relative_improvement(x, y, true)),
                            _ => None,
                        };
                        (r.fold.clone(), relative_improvement(b.summary.dice_avg, r.summary.dice_avg, false), hd)
                    })
                    .collect();
                let base_dice = mean(pairs.iter().map(|(b, _)| b.summary.dice_avg)).expect("nonempty");
                let arm_dice = mean(pairs.iter().map(|(_, r)| r.summary.dice_avg)).expect("nonempty");
                let both: Vec<(f64, f64)> = pairs
                    .iter()
                    .filter_map(|(b, r)| Some((b.summary.hd95_avg?, r.summary.hd95_avg?)))
                    .collect();
                let hd95_of_means = match (mean(both.iter().map(|p| p.0)), mean(both.iter().map(|p| p.1))) {
                    (Some(x), Some(y)) => Some(relative_improvement(x, y, true)),
                    _ => None,
                };
                Some(Improvement {
                    arm,
                    dice_of_means: relative_improvement(base_dice, arm_dice, false),
                    hd95_of_means,
                    dice_mean_of_folds: mean(per_fold.iter().map(|p| p.1)).expect("nonempty"),
                    hd95_mean_of_folds: mean(per_fold.iter().filter_map(|p| p.2)),
                    per_fold,
                })
            })
            .collect()
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Markdown => self.to_markdown(),
            ReportFormat::Csv => self.to_csv(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("## Per-fold results\n\n");
        out.push_str("Dice in %, HD95 in mm.\n\n");
        out.push_str("| Fold | Arm | Dice WT | Dice ET | Dice TC | Dice Avg | HD95 WT | HD95 ET | HD95 TC | HD95 Avg | HD95 excluded | Nesting violations |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let (dice, hd) = region_values(&r.summary);
            let excluded: usize = r.summary.regions.iter().map(|s| s.hd95_excluded).sum();
            writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                r.fold,
                r.arm,
                fmt_dice(dice[0]),
                fmt_dice(dice[1]),
                fmt_dice(dice[2]),
                fmt_dice(dice[3]),
                fmt_hd(hd[0]),
                fmt_hd(hd[1]),
                fmt_hd(hd[2]),
                fmt_hd(hd[3]),
                excluded,
                r.nesting_violations.map_or_else(|| "n/a".into(), |n| n.to_string()),
            )
            .unwrap();
        }
        out.push_str("\n## Cross-fold summary\n\n");
        out.push_str("| Arm | Folds | Dice WT | Dice ET | Dice TC | Dice Avg | HD95 WT | HD95 ET | HD95 TC | HD95 Avg |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
        for s in self.arm_summaries() {
            writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                s.arm,
                s.folds,
                fmt_dice(s.dice[0]),
                fmt_dice(s.dice[1]),
                fmt_dice(s.dice[2]),
                fmt_dice(s.dice[3]),
                fmt_hd(s.hd95[0]),
                fmt_hd(s.hd95[1]),
                fmt_hd(s.hd95[2]),
                fmt_hd(s.hd95[3]),
            )
            .unwrap();
        }
        let improvements = self.improvements();
        if !improvements.is_empty() {
            out.push_str("\n## Improvement over baseline\n\n");
            for imp in &improvements {
                writeln!(
                    out,
                    "- {}: average improvement of {} in the Dice score and {} in HD95 (relative change of fold-averaged means)",
                    imp.arm,
                    fmt_pct(Some(imp.dice_of_means)),
                    fmt_pct(imp.hd95_of_means)
                )
                .unwrap();
                writeln!(
                    out,
                    "- {}: average improvement of {} in the Dice score and {} in HD95 (mean of per-fold relative changes)",
                    imp.arm,
                    fmt_pct(Some(imp.dice_mean_of_folds)),
                    fmt_pct(imp.hd95_mean_of_folds)
                )
                .unwrap();
                for (fold, d, h) in &imp.per_fold {
                    writeln!(out, "  - {fold}: Dice {}, HD95 {}", fmt_pct(Some(*d)), fmt_pct(*h)).unwrap();
                }
            }
        }
        let c = &self.conventions;
        writeln!(
            out,
            "\nConventions: empty-vs-empty Dice = {}, one-empty HD95 = {} mm (excluded from means), percentile = {}.",
            c.empty_dice, c.hd95_sentinel, c.percentile
        )
        .unwrap();
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "section,fold,arm,dice_wt,dice_et,dice_tc,dice_avg,hd95_wt,hd95_et,hd95_tc,hd95_avg\n",
        );
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"));
        for r in &self.rows {
            let (dice, hd) = region_values(&r.summary);
            writeln!(
                out,
                "fold,{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
                r.fold, r.arm, dice[0], dice[1], dice[2], dice[3], cell(hd[0]), cell(hd[1]), cell(hd[2]), cell(hd[3])
            )
            .unwrap();
        }
        for s in self.arm_summaries() {
            writeln!(
                out,
                "mean,all,{},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
                s.arm,
                s.dice[0],
                s.dice[1],
                s.dice[2],
                s.dice[3],
                cell(s.hd95[0]),
                cell(s.hd95[1]),
                cell(s.hd95[2]),
                cell(s.hd95[3])
            )
            .unwrap();
        }
        for imp in self.improvements() {
            writeln!(
                out,
                "improvement_of_means_pct,all,{},,,,{:.6},,,,{}",
                imp.arm,
                imp.dice_of_means,
                cell(imp.hd95_of_means)
            )
            .unwrap();
            writeln!(
                out,
                "improvement_mean_of_folds_pct,all,{},,,,{:.6},,,,{}",
                imp.arm,
                imp.dice_mean_of_folds,
                cell(imp.hd95_mean_of_folds)
            )
            .unwrap();
        }
        out
    }
}
