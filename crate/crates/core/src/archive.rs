//! Evaluation logs, JSON Lines archives and the statistics derived from them.
//!
//! An archive file starts with one header line (`"kind":"header"`) followed
//! by one evaluation entry per line. Everything else (per-run bests,
//! summary row, aspect tables) is recomputed from the entries.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::TrainSpec;
use crate::shape::{propagate_shapes_with_classes, Aspect, ImageShape, ShapeError};
use crate::space::{HyperparamVector, NUM_VARS};
use crate::sso::{Branch, SsoConfig};

pub const ARCHIVE_FORMAT: &str = "swarmtune-archive/1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive has no evaluated runs")]
    EmptyArchive,
    #[error("malformed archive at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Baseline,
    Init,
    Update,
}

/// Branch taken for each of the 16 variables, written as e.g. `GGPXR...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BranchTags(pub [Branch; NUM_VARS]);

impl BranchTags {
    pub fn count(&self, branch: Branch) -> usize {
        self.0.iter().filter(|&&b| b == branch).count()
    }
}

impl fmt::Display for BranchTags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|b| write!(f, "{}", b.as_char()))
    }
}

impl Serialize for BranchTags {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BranchTags {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != NUM_VARS {
            return Err(serde::de::Error::custom(format!(
                "expected 16 branch tags, got {s:?}"
            )));
        }
        let mut tags = [Branch::X; NUM_VARS];
        for (slot, c) in tags.iter_mut().zip(chars) {
            *slot = Branch::from_char(c)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown branch tag {c:?}")))?;
        }
        Ok(BranchTags(tags))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationLogEntry {
    pub run: u32,
    pub generation: u32,
    /// Solution slot, 1-based; 0 for the baseline.
    pub index: u32,
    pub vector: HyperparamVector,
    pub fitness: f64,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_tags: Option<BranchTags>,
    /// Seconds.
    pub eval_time: f64,
    pub cached: bool,
    pub param_count: u64,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub kind: String,
    pub format: String,
    pub tool_version: String,
    pub config_digest: String,
    pub config: SsoConfig,
    pub train: TrainSpec,
    pub input: ImageShape,
    pub num_classes: u64,
    pub evaluator: String,
    /// Pinned variables, if the search ran on a reduced space.
    #[serde(default)]
    pub pins: [Option<i64>; NUM_VARS],
    /// Standard deviations divide by n.
    pub std: String,
    pub time_unit: String,
}

impl ArchiveHeader {
    pub fn new(
        config: SsoConfig,
        train: TrainSpec,
        input: ImageShape,
        num_classes: u64,
        evaluator: String,
        pins: [Option<i64>; NUM_VARS],
    ) -> Self {
        let config_digest = crate::evaluation::digest_json(&(
            &config,
            &train,
            &input,
            num_classes,
            &evaluator,
            &pins,
        ));
        Self {
            kind: "header".into(),
            format: ARCHIVE_FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_digest,
            config,
            train,
            input,
            num_classes,
            evaluator,
            pins,
            std: "population".into(),
            time_unit: "seconds".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArchive {
    pub header: ArchiveHeader,
    pub entries: Vec<EvaluationLogEntry>,
}

/// Outcome of one run, recomputed from its entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: u32,
    pub best_vector: HyperparamVector,
    pub best_fitness: f64,
    pub baseline_fitness: Option<f64>,
    pub wins_generation: Option<u32>,
    pub run_time_s: f64,
}

/// Aggregate statistics over the per-run bests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub acc_max: f64,
    pub acc_min: f64,
    pub acc_mean: f64,
    /// Population standard deviation.
    pub acc_std: f64,
    /// Mean wall time per generation, seconds.
    pub time_mean: f64,
    /// Summed wall time, seconds.
    pub total_time: f64,
}

/// Counts of wider / taller / square feature maps per layer over the
/// per-run bests. Rows follow [`Aspect::ALL`], columns [`AspectTable::LAYERS`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectTable {
    pub counts: [[u32; 5]; 3],
}

impl AspectTable {
    pub const LAYERS: [&'static str; 5] = ["Input", "O1", "O2", "O3", "O4"];

    pub fn count(&self, aspect: Aspect, layer: usize) -> u32 {
        let row = Aspect::ALL.iter().position(|&a| a == aspect).unwrap();
        self.counts[row][layer]
    }

    pub fn column_sums(&self) -> [u32; 5] {
        let mut sums = [0; 5];
        for row in &self.counts {
            for (s, c) in sums.iter_mut().zip(row) {
                *s += c;
            }
        }
        sums
    }
}

impl RunArchive {
    pub fn new(header: ArchiveHeader) -> Self {
        Self {
            header,
            entries: Vec::new(),
        }
    }

    pub fn run_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.entries.iter().map(|e| e.run).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Per-run bests: the first entry reaching the run's maximal swarm
    /// fitness, in log order. Baseline entries are excluded.
    pub fn run_records(&self) -> Vec<RunRecord> {
        let mut by_run: BTreeMap<u32, Vec<&EvaluationLogEntry>> = BTreeMap::new();
        for e in &self.entries {
            by_run.entry(e.run).or_default().push(e);
        }
        by_run
            .into_iter()
            .filter_map(|(run, entries)| run_record(run, &entries))
            .collect()
    }

    pub fn summary(&self) -> Result<Summary, ArchiveError> {
        summarize(self)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), ArchiveError> {
        serde_json::to_writer(&mut w, &self.header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, ArchiveError> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| match l {
            Ok(text) => !text.trim().is_empty(),
            Err(_) => true,
        });
        let (_, first) = lines.next().ok_or(ArchiveError::Malformed {
            line: 1,
            reason: "empty archive".into(),
        })?;
        let header: ArchiveHeader =
            serde_json::from_str(&first?).map_err(|e| ArchiveError::Malformed {
                line: 1,
                reason: format!("bad header: {e}"),
            })?;
        if header.kind != "header" {
            return Err(ArchiveError::Malformed {
                line: 1,
                reason: format!("first line has kind {:?}, expected \"header\"", header.kind),
            });
        }
        let mut archive = RunArchive::new(header);
        for (k, line) in lines {
            let entry: EvaluationLogEntry =
                serde_json::from_str(&line?).map_err(|e| ArchiveError::Malformed {
                    line: k + 1,
                    reason: e.to_string(),
                })?;
            archive.entries.push(entry);
        }
        Ok(archive)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ArchiveError> {
        Self::read_jsonl(text.as_bytes())
    }

    /// Writes one row per run: run, best_vector, best_fitness,
    /// wins_generation, run_time_s.
    pub fn write_runs_csv<W: Write>(&self, w: W) -> Result<(), ArchiveError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "run",
            "best_vector",
            "best_fitness",
            "wins_generation",
            "run_time_s",
        ])?;
        for r in self.run_records() {
            out.write_record([
                r.run.to_string(),
                r.best_vector.to_string(),
                r.best_fitness.to_string(),
                r.wins_generation.map(|g| g.to_string()).unwrap_or_default(),
                r.run_time_s.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes the aggregate row with the accuracy/time column names.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<(), ArchiveError> {
        let s = self.summary()?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "Acc(max)",
            "Acc(min)",
            "Acc(mean)",
            "Acc(std)",
            "Time(mean)",
            "Total Time",
        ])?;
        out.write_record(
            [
                s.acc_max,
                s.acc_min,
                s.acc_mean,
                s.acc_std,
                s.time_mean,
                s.total_time,
            ]
            .map(|x| x.to_string()),
        )?;
        out.flush()?;
        Ok(())
    }
}

fn run_record(run: u32, entries: &[&EvaluationLogEntry]) -> Option<RunRecord> {
    let baseline_fitness = entries
        .iter()
        .find(|e| e.source == Source::Baseline)
        .map(|e| e.fitness);
    let mut best: Option<&EvaluationLogEntry> = None;
    let mut wins_generation = None;
    let mut iter = entries.iter().peekable();
    while let Some(e) = iter.next() {
        if e.source != Source::Baseline && best.is_none_or(|b| e.fitness > b.fitness) {
            best = Some(e);
        }
        let generation_ends = iter
            .peek()
            .is_none_or(|next| next.generation != e.generation);
        if generation_ends && wins_generation.is_none() {
            if let (Some(b), Some(lenet)) = (best, baseline_fitness) {
                if b.fitness > lenet {
                    wins_generation = Some(e.generation);
                }
            }
        }
    }
    let best = best?;
    Some(RunRecord {
        run,
        best_vector: best.vector,
        best_fitness: best.fitness,
        baseline_fitness,
        wins_generation,
        run_time_s: stable_sum(entries.iter().map(|e| e.eval_time)),
    })
}

/// Sum in sorted order, so the result does not depend on log order.
fn stable_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

fn mean(xs: &[f64]) -> f64 {
    stable_sum(xs.iter().copied()) / xs.len() as f64
}

/// Accuracy statistics over the per-run bests, with population standard
/// deviation, and time statistics over (run, generation) groups.
pub fn summarize(archive: &RunArchive) -> Result<Summary, ArchiveError> {
    let records = archive.run_records();
    if records.is_empty() {
        return Err(ArchiveError::EmptyArchive);
    }
    let bests: Vec<f64> = records.iter().map(|r| r.best_fitness).collect();
    let acc_mean = mean(&bests);
    let variance = bests.iter().map(|b| (b - acc_mean).powi(2)).sum::<f64>() / bests.len() as f64;

    let mut per_generation: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
    for e in &archive.entries {
        per_generation
            .entry((e.run, e.generation))
            .or_default()
            .push(e.eval_time);
    }
    let gen_times: Vec<f64> = per_generation
        .into_values()
        .map(|times| stable_sum(times.into_iter()))
        .collect();

    Ok(Summary {
        runs: records.len(),
        acc_max: bests.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        acc_min: bests.iter().copied().fold(f64::INFINITY, f64::min),
        acc_mean,
        acc_std: variance.sqrt(),
        time_mean: mean(&gen_times),
        total_time: stable_sum(archive.entries.iter().map(|e| e.eval_time)),
    })
}

/// Classifies the input and the four layer outputs of every run's best.
pub fn aspect_table(archive: &RunArchive, input: &ImageShape) -> Result<AspectTable, ArchiveError> {
    let records = archive.run_records();
    if records.is_empty() {
        return Err(ArchiveError::EmptyArchive);
    }
    let mut counts = [[0u32; 5]; 3];
    for r in &records {
        let trace =
            propagate_shapes_with_classes(&r.best_vector, input, archive.header.num_classes)?;
        for (col, (_, shape)) in trace.stages().iter().enumerate() {
            let row = Aspect::ALL
                .iter()
                .position(|&a| a == shape.aspect())
                .unwrap();
            counts[row][col] += 1;
        }
    }
    Ok(AspectTable { counts })
}
