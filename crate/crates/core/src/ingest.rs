//! Fixation reports: parsing, IA assignment and trial/fixation cleaning.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stimulus::{Stimulus, Style};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Congruent,
    Incongruent,
    ContextFree,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Congruent => "congruent",
            Condition::Incongruent => "incongruent",
            Condition::ContextFree => "context_free",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "congruent" => Ok(Condition::Congruent),
            "incongruent" => Ok(Condition::Incongruent),
            "context_free" | "context-free" => Ok(Condition::ContextFree),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixationEvent {
    pub fixation_index: usize,
    pub start_ms: i64,
    pub end_ms: i64,
    pub x_px: f64,
    pub y_px: f64,
    pub pupil: f64,
    pub ia_index: Option<usize>,
}

impl FixationEvent {
    pub fn duration_ms(&self) -> i64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub participant_id: String,
    pub trial_id: String,
    pub stimulus_id: String,
    pub condition: Condition,
    pub block_style: Style,
    pub fixations: Vec<FixationEvent>,
    pub track_loss_fraction: f64,
}

/// Half-open pixel rectangle `[left, right) × [top, bottom)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.left && x < self.right && y >= self.top && y < self.bottom
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IALayout {
    pub stimulus_id: String,
    pub rects: BTreeMap<usize, Rect>,
}

impl IALayout {
    /// One rectangle per IA of `stimulus`, and nothing else.
    pub fn validate_for(&self, stimulus: &Stimulus) -> Result<()> {
        let expected: Vec<usize> = (0..stimulus.ias.len()).collect();
        let got: Vec<usize> = self.rects.keys().copied().collect();
        if expected != got {
            return Err(Error::invalid(format!(
                "layout for `{}` has rectangles for IAs {got:?}, stimulus has {} IAs",
                self.stimulus_id,
                stimulus.ias.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FixationReport {
    /// Sorted by (participant_id, trial_id); fixations sorted by start time.
    pub trials: Vec<TrialRecord>,
    /// Whether the report carried an `ia_index` column (no layout needed then).
    pub has_ia_index: bool,
}

const REQUIRED_COLUMNS: [&str; 12] = [
    "participant_id",
    "trial_id",
    "stimulus_id",
    "condition",
    "block_style",
    "fixation_index",
    "start_ms",
    "end_ms",
    "x_px",
    "y_px",
    "pupil",
    "track_loss_fraction",
];

fn delimiter_for(content: &str) -> u8 {
    let header = content.lines().next().unwrap_or("");
    if header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

fn parse_ms(raw: &str) -> std::result::Result<i64, String> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return Ok(v);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 => Ok(v as i64),
        Ok(_) => Err(format!("`{raw}` is not a whole number of milliseconds")),
        Err(_) => Err(format!("`{raw}` is not a number")),
    }
}

fn parse_f64(raw: &str) -> std::result::Result<f64, String> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("`{}` is not a finite number", raw.trim())),
    }
}

struct TrialBuilder {
    trial: TrialRecord,
    first_line: usize,
    // (line, fixation) in file order
    rows: Vec<(usize, FixationEvent)>,
}

pub fn parse_fixation_report(path: &Path) -> Result<FixationReport> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fixation_report_str(&content, &path.display().to_string())
}

pub fn parse_fixation_report_str(content: &str, file: &str) -> Result<FixationReport> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter_for(content))
        .trim(csv::Trim::All)
        .from_reader(content.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| Error::parse(file, 1, "<header>", e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = HashMap::new();
    for name in REQUIRED_COLUMNS {
        let i = column(name).ok_or_else(|| Error::parse(file, 1, name, "missing column"))?;
        idx.insert(name, i);
    }
    let ia_col = column("ia_index");

    let mut trials: BTreeMap<(String, String), TrialBuilder> = BTreeMap::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(file, line, "<row>", e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let get = |name: &str| record.get(idx[name]).unwrap_or("");
        let fail = |name: &str, msg: String| Error::parse(file, line, name, msg);

        let condition: Condition = get("condition").parse().map_err(|e| fail("condition", e))?;
        let block_style: Style = get("block_style").parse().map_err(|e| fail("block_style", e))?;
        let fixation_index: usize = get("fixation_index")
            .parse()
            .map_err(|_| fail("fixation_index", format!("`{}` is not a non-negative integer", get("fixation_index"))))?;
        let start_ms = parse_ms(get("start_ms")).map_err(|e| fail("start_ms", e))?;
        let end_ms = parse_ms(get("end_ms")).map_err(|e| fail("end_ms", e))?;
        if end_ms <= start_ms {
            return Err(fail(
                "end_ms",
                format!("end_ms {end_ms} must be greater than start_ms {start_ms}"),
            ));
        }
        let x_px = parse_f64(get("x_px")).map_err(|e| fail("x_px", e))?;
        let y_px = parse_f64(get("y_px")).map_err(|e| fail("y_px", e))?;
        let pupil = parse_f64(get("pupil")).map_err(|e| fail("pupil", e))?;
        let track_loss = parse_f64(get("track_loss_fraction")).map_err(|e| fail("track_loss_fraction", e))?;
        if !(0.0..=1.0).contains(&track_loss) {
            return Err(fail("track_loss_fraction", format!("{track_loss} is outside [0, 1]")));
        }
        let ia_index = match ia_col.and_then(|i| record.get(i)) {
            None | Some("") => None,
            Some(raw) => Some(
                raw.parse::<usize>()
                    .map_err(|_| fail("ia_index", format!("`{raw}` is not a non-negative integer")))?,
            ),
        };

        let fixation = FixationEvent {
            fixation_index,
            start_ms,
            end_ms,
            x_px,
            y_px,
            pupil,
            ia_index,
        };
        let key = (get("participant_id").to_string(), get("trial_id").to_string());
        let builder = trials.entry(key.clone()).or_insert_with(|| TrialBuilder {
            trial: TrialRecord {
                participant_id: key.0.clone(),
                trial_id: key.1.clone(),
                stimulus_id: get("stimulus_id").to_string(),
                condition,
                block_style,
                fixations: Vec::new(),
                track_loss_fraction: track_loss,
            },
            first_line: line,
            rows: Vec::new(),
        });
        let t = &builder.trial;
        let inconsistent = |name: &str| {
            fail(
                name,
                format!(
                    "differs from the value on line {} for trial ({}, {})",
                    builder.first_line, t.participant_id, t.trial_id
                ),
            )
        };
        if t.stimulus_id != get("stimulus_id") {
            return Err(inconsistent("stimulus_id"));
        }
        if t.condition != condition {
            return Err(inconsistent("condition"));
        }
        if t.block_style != block_style {
            return Err(inconsistent("block_style"));
        }
        if t.track_loss_fraction != track_loss {
            return Err(inconsistent("track_loss_fraction"));
        }
        builder.rows.push((line, fixation));
    }

    let mut out = Vec::with_capacity(trials.len());
    for (_, mut builder) in trials {
        builder.rows.sort_by_key(|(_, f)| f.fixation_index);
        for pair in builder.rows.windows(2) {
            let (_, a) = &pair[0];
            let (line, b) = &pair[1];
            if a.fixation_index == b.fixation_index {
                return Err(Error::parse(
                    file,
                    *line,
                    "fixation_index",
                    format!("duplicate fixation_index {}", b.fixation_index),
                ));
            }
            if b.start_ms <= a.start_ms {
                return Err(Error::parse(
                    file,
                    *line,
                    "start_ms",
                    format!(
                        "fixation {} starts at {} ms, not after fixation {} ({} ms)",
                        b.fixation_index, b.start_ms, a.fixation_index, a.start_ms
                    ),
                ));
            }
        }
        builder.trial.fixations = builder.rows.into_iter().map(|(_, f)| f).collect();
        out.push(builder.trial);
    }

    Ok(FixationReport {
        trials: out,
        has_ia_index: ia_col.is_some(),
    })
}

pub fn write_fixation_report<W: Write>(trials: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.insert(11, "ia_index");
    w.write_record(&header).map_err(csv_err)?;
    for t in trials {
        for f in &t.fixations {
            w.write_record([
                t.participant_id.clone(),
                t.trial_id.clone(),
                t.stimulus_id.clone(),
                t.condition.to_string(),
                t.block_style.to_string(),
                f.fixation_index.to_string(),
                f.start_ms.to_string(),
                f.end_ms.to_string(),
                f.x_px.to_string(),
                f.y_px.to_string(),
                f.pupil.to_string(),
                f.ia_index.map(|i| i.to_string()).unwrap_or_default(),
                t.track_loss_fraction.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

pub fn parse_layouts(path: &Path) -> Result<BTreeMap<String, IALayout>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_layouts_str(&content, &path.display().to_string())
}

pub fn parse_layouts_str(content: &str, file: &str) -> Result<BTreeMap<String, IALayout>> {
    #[derive(Deserialize)]
    struct Row {
        stimulus_id: String,
        ia_index: usize,
        left: f64,
        top: f64,
        right: f64,
        bottom: f64,
    }

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter_for(content))
        .trim(csv::Trim::All)
        .from_reader(content.as_bytes());
    let mut layouts: BTreeMap<String, IALayout> = BTreeMap::new();
    for result in reader.deserialize::<Row>() {
        let row = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(file, line, "<row>", e.to_string())
        })?;
        let rect = Rect {
            left: row.left,
            top: row.top,
            right: row.right,
            bottom: row.bottom,
        };
        let what = format!("stimulus `{}` IA {}", row.stimulus_id, row.ia_index);
        if ![rect.left, rect.top, rect.right, rect.bottom].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::invalid(format!("{file}: {what}: coordinates must be finite and non-negative")));
        }
        if rect.left >= rect.right || rect.top >= rect.bottom {
            return Err(Error::invalid(format!("{file}: {what}: empty rectangle")));
        }
        let layout = layouts.entry(row.stimulus_id.clone()).or_insert_with(|| IALayout {
            stimulus_id: row.stimulus_id.clone(),
            rects: BTreeMap::new(),
        });
        if layout.rects.insert(row.ia_index, rect).is_some() {
            return Err(Error::invalid(format!("{file}: {what}: duplicate rectangle")));
        }
    }
    Ok(layouts)
}

/// Set each fixation's `ia_index` to the layout rectangle containing it.
pub fn assign_fixations_to_ias(trial: &TrialRecord, layout: &IALayout) -> Result<TrialRecord> {
    if trial.stimulus_id != layout.stimulus_id {
        return Err(Error::invalid(format!(
            "trial ({}, {}) shows `{}` but layout is for `{}`",
            trial.participant_id, trial.trial_id, trial.stimulus_id, layout.stimulus_id
        )));
    }
    let mut out = trial.clone();
    for f in &mut out.fixations {
        let mut hits = layout
            .rects
            .iter()
            .filter(|(_, r)| r.contains(f.x_px, f.y_px))
            .map(|(&i, _)| i);
        f.ia_index = hits.next();
        if let Some(other) = hits.next() {
            return Err(Error::invalid(format!(
                "ambiguous layout for `{}`: point ({}, {}) lies in IA {} and IA {other}",
                layout.stimulus_id,
                f.x_px,
                f.y_px,
                f.ia_index.unwrap()
            )));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackLossSummary {
    pub threshold: f64,
    pub input_trials: usize,
    pub removed_trials: usize,
}

/// Drop trials whose track-loss fraction exceeds `threshold` (strictly).
pub fn filter_trials_by_track_loss(
    trials: Vec<TrialRecord>,
    threshold: f64,
) -> Result<(Vec<TrialRecord>, TrackLossSummary)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!(
            "track-loss threshold {threshold} is outside [0, 1]"
        )));
    }
    let input_trials = trials.len();
    let kept: Vec<TrialRecord> = trials
        .into_iter()
        .filter(|t| t.track_loss_fraction <= threshold)
        .collect();
    let summary = TrackLossSummary {
        threshold,
        input_trials,
        removed_trials: input_trials - kept.len(),
    };
    if summary.removed_trials > 0 {
        log::info!(
            "removed {} of {} trials with track loss above {}",
            summary.removed_trials,
            input_trials,
            threshold
        );
    }
    Ok((kept, summary))
}

/// Fixation outlier criteria. Defaults: drop fixations shorter than 80 ms,
/// and those longer than the participant's mean + 3 SD (sample SD, computed
/// over the fixations that pass the minimum-duration rule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierPolicy {
    pub min_duration_ms: i64,
    pub sd_multiplier: Option<f64>,
}

impl Default for OutlierPolicy {
    fn default() -> Self {
        OutlierPolicy {
            min_duration_ms: 80,
            sd_multiplier: Some(3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierSummary {
    pub policy: OutlierPolicy,
    pub input_fixations: usize,
    pub removed_short: usize,
    pub removed_long: usize,
    pub removed_fraction: f64,
    /// Participants with fewer than two fixations, where only the minimum rule applied.
    pub sd_rule_skipped: Vec<String>,
}

impl OutlierSummary {
    pub fn removed(&self) -> usize {
        self.removed_short + self.removed_long
    }
}

pub fn remove_outlier_fixations(
    mut trials: Vec<TrialRecord>,
    policy: &OutlierPolicy,
) -> (Vec<TrialRecord>, OutlierSummary) {
    let input_fixations: usize = trials.iter().map(|t| t.fixations.len()).sum();

    let mut removed_short = 0;
    for t in &mut trials {
        let before = t.fixations.len();
        t.fixations.retain(|f| f.duration_ms() >= policy.min_duration_ms);
        removed_short += before - t.fixations.len();
    }

    let mut removed_long = 0;
    let mut sd_rule_skipped = Vec::new();
    if let Some(k) = policy.sd_multiplier {
        let mut by_participant: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for t in &trials {
            let entry = by_participant.entry(t.participant_id.as_str()).or_default();
            entry.extend(t.fixations.iter().map(|f| f.duration_ms() as f64));
        }
        let mut bounds: HashMap<String, f64> = HashMap::new();
        for (p, durations) in by_participant {
            if durations.len() < 2 {
                log::warn!("participant {p}: fewer than 2 fixations, SD outlier rule skipped");
                sd_rule_skipped.push(p.to_string());
                continue;
            }
            let n = durations.len() as f64;
            let mean = durations.iter().sum::<f64>() / n;
            let var = durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
            bounds.insert(p.to_string(), mean + k * var.sqrt());
        }
        for t in &mut trials {
            if let Some(&bound) = bounds.get(&t.participant_id) {
                let before = t.fixations.len();
                t.fixations.retain(|f| (f.duration_ms() as f64) <= bound);
                removed_long += before - t.fixations.len();
            }
        }
    }

    for t in &mut trials {
        for (i, f) in t.fixations.iter_mut().enumerate() {
            f.fixation_index = i;
        }
    }
    trials.sort_by(|a, b| {
        (a.participant_id.as_str(), a.trial_id.as_str()).cmp(&(b.participant_id.as_str(), b.trial_id.as_str()))
    });

    let removed = removed_short + removed_long;
    let summary = OutlierSummary {
        policy: *policy,
        input_fixations,
        removed_short,
        removed_long,
        removed_fraction: if input_fixations == 0 {
            0.0
        } else {
            removed as f64 / input_fixations as f64
        },
        sd_rule_skipped,
    };
    (trials, summary)
}
