//! Per-interest-area reading measures.
//!
//! All measures are computed over the in-IA fixation sequence of a trial:
//! fixations outside every IA are dropped first, so they neither end a run
//! nor count as an exit.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{csv_err, Condition, TrialRecord};
use crate::stimulus::Stimulus;

/// One in-IA fixation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IaFixation {
    pub ia: usize,
    pub duration_ms: i64,
    pub pupil: f64,
}

pub fn in_ia_sequence(trial: &TrialRecord) -> Vec<IaFixation> {
    trial
        .fixations
        .iter()
        .filter_map(|f| {
            f.ia_index.map(|ia| IaFixation {
                ia,
                duration_ms: f.duration_ms(),
                pupil: f.pupil,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FirstPass {
    pub ffd_ms: i64,
    pub frd_ms: i64,
    pub gp_ms: i64,
}

/// First fixation duration, first-run dwell time and go-past time for `ia`.
///
/// Go-past time sums the IA's own fixations from first entry up to and
/// including the one followed by a move to a lower IA. Without any leftward
/// exit it equals the first-run dwell time.
pub fn first_pass_measures(seq: &[IaFixation], ia: usize) -> Option<FirstPass> {
    let first = seq.iter().position(|f| f.ia == ia)?;
    let ffd_ms = seq[first].duration_ms;
    let frd_ms = seq[first..]
        .iter()
        .take_while(|f| f.ia == ia)
        .map(|f| f.duration_ms)
        .sum();

    let mut acc = 0;
    let mut gp_ms = frd_ms;
    for (k, f) in seq.iter().enumerate().skip(first) {
        if f.ia != ia {
            continue;
        }
        acc += f.duration_ms;
        if seq.get(k + 1).is_some_and(|next| next.ia < ia) {
            gp_ms = acc;
            break;
        }
    }
    Some(FirstPass {
        ffd_ms,
        frd_ms,
        gp_ms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Totals {
    pub dt_ms: Option<i64>,
    pub rr_ms: Option<i64>,
    pub fc: u32,
}

pub fn total_measures(seq: &[IaFixation], ia: usize) -> Totals {
    let fc = seq.iter().filter(|f| f.ia == ia).count() as u32;
    match first_pass_measures(seq, ia) {
        None => Totals {
            dt_ms: None,
            rr_ms: None,
            fc,
        },
        Some(fp) => {
            let dt: i64 = seq.iter().filter(|f| f.ia == ia).map(|f| f.duration_ms).sum();
            Totals {
                dt_ms: Some(dt),
                rr_ms: Some(dt - fp.frd_ms),
                fc,
            }
        }
    }
}

/// Unweighted mean pupil size over the IA's fixations.
pub fn pupil_measure(seq: &[IaFixation], ia: usize) -> Option<f64> {
    let (sum, n) = seq
        .iter()
        .filter(|f| f.ia == ia)
        .fold((0.0, 0usize), |(s, n), f| (s + f.pupil, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Number of direct moves from `ia` to a lower-numbered IA.
pub fn regression_count(seq: &[IaFixation], ia: usize) -> u32 {
    seq.windows(2)
        .filter(|w| w[0].ia == ia && w[1].ia < ia)
        .count() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct IAMeasures {
    pub ffd_ms: Option<i64>,
    pub frd_ms: Option<i64>,
    pub gp_ms: Option<i64>,
    pub dt_ms: Option<i64>,
    pub rr_ms: Option<i64>,
    pub ps: Option<f64>,
    pub fc: u32,
    pub reg_count: u32,
}

pub fn ia_measures(seq: &[IaFixation], ia: usize) -> IAMeasures {
    let fp = first_pass_measures(seq, ia);
    let totals = total_measures(seq, ia);
    IAMeasures {
        ffd_ms: fp.map(|f| f.ffd_ms),
        frd_ms: fp.map(|f| f.frd_ms),
        gp_ms: fp.map(|f| f.gp_ms),
        dt_ms: totals.dt_ms,
        rr_ms: totals.rr_ms,
        ps: pupil_measure(seq, ia),
        fc: totals.fc,
        reg_count: regression_count(seq, ia),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Ffd,
    Frd,
    Gp,
    Dt,
    Rr,
    Ps,
    Fc,
    Reg,
}

impl Measure {
    pub const ALL: [Measure; 8] = [
        Measure::Ffd,
        Measure::Frd,
        Measure::Gp,
        Measure::Dt,
        Measure::Rr,
        Measure::Ps,
        Measure::Fc,
        Measure::Reg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Ffd => "ffd",
            Measure::Frd => "frd",
            Measure::Gp => "gp",
            Measure::Dt => "dt",
            Measure::Rr => "rr",
            Measure::Ps => "ps",
            Measure::Fc => "fc",
            Measure::Reg => "reg",
        }
    }

    pub fn value(self, m: &IAMeasures) -> Option<f64> {
        match self {
            Measure::Ffd => m.ffd_ms.map(|v| v as f64),
            Measure::Frd => m.frd_ms.map(|v| v as f64),
            Measure::Gp => m.gp_ms.map(|v| v as f64),
            Measure::Dt => m.dt_ms.map(|v| v as f64),
            Measure::Rr => m.rr_ms.map(|v| v as f64),
            Measure::Ps => m.ps,
            Measure::Fc => Some(m.fc as f64),
            Measure::Reg => Some(m.reg_count as f64),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Measure::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown measure `{s}` (expected ffd|frd|gp|dt|rr|ps|fc|reg)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MeasureKey {
    pub participant_id: String,
    pub trial_id: String,
    pub stimulus_id: String,
    pub condition: Condition,
    pub ia_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureRow {
    pub key: MeasureKey,
    pub measures: IAMeasures,
}

/// Measures for every IA of every retained trial, sorted by key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasureTable {
    pub rows: Vec<MeasureRow>,
}

impl MeasureTable {
    pub fn from_rows(mut rows: Vec<MeasureRow>) -> Result<Self> {
        rows.sort_by(|a, b| a.key.cmp(&b.key));
        if let Some(w) = rows.windows(2).find(|w| w[0].key == w[1].key) {
            let k = &w[0].key;
            return Err(Error::invalid(format!(
                "duplicate measure row ({}, {}, {}, IA {})",
                k.participant_id, k.trial_id, k.stimulus_id, k.ia_index
            )));
        }
        Ok(MeasureTable { rows })
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Whether the IA immediately before each row's IA was fixated in the
    /// same trial (false for IA 0).
    pub fn previous_viewed(&self) -> Vec<bool> {
        let lookup: HashMap<(&str, &str, usize), u32> = self
            .rows
            .iter()
            .map(|r| ((r.key.participant_id.as_str(), r.key.trial_id.as_str(), r.key.ia_index), r.measures.fc))
            .collect();
        self.rows
            .iter()
            .map(|r| {
                r.key.ia_index > 0
                    && lookup
                        .get(&(r.key.participant_id.as_str(), r.key.trial_id.as_str(), r.key.ia_index - 1))
                        .is_some_and(|&fc| fc > 0)
            })
            .collect()
    }
}

pub fn compute_trial_measures(trial: &TrialRecord, stimulus: &Stimulus) -> Result<Vec<MeasureRow>> {
    if trial.stimulus_id != stimulus.stimulus_id {
        return Err(Error::invalid(format!(
            "trial ({}, {}) shows `{}`, not `{}`",
            trial.participant_id, trial.trial_id, trial.stimulus_id, stimulus.stimulus_id
        )));
    }
    let seq = in_ia_sequence(trial);
    if let Some(f) = seq.iter().find(|f| f.ia >= stimulus.ias.len()) {
        return Err(Error::invalid(format!(
            "trial ({}, {}): fixation on IA {} but `{}` has {} IAs",
            trial.participant_id,
            trial.trial_id,
            f.ia,
            stimulus.stimulus_id,
            stimulus.ias.len()
        )));
    }
    Ok((0..stimulus.ias.len())
        .map(|ia| MeasureRow {
            key: MeasureKey {
                participant_id: trial.participant_id.clone(),
                trial_id: trial.trial_id.clone(),
                stimulus_id: trial.stimulus_id.clone(),
                condition: trial.condition,
                ia_index: ia,
            },
            measures: ia_measures(&seq, ia),
        })
        .collect())
}

pub fn compute_measure_table(trials: &[TrialRecord], stimuli: &[Stimulus]) -> Result<MeasureTable> {
    let by_id: HashMap<&str, &Stimulus> = stimuli.iter().map(|s| (s.stimulus_id.as_str(), s)).collect();
    let per_trial: Vec<Vec<MeasureRow>> = trials
        .par_iter()
        .map(|t| {
            let s = by_id.get(t.stimulus_id.as_str()).ok_or_else(|| {
                Error::invalid(format!(
                    "trial ({}, {}) refers to unknown stimulus `{}`",
                    t.participant_id, t.trial_id, t.stimulus_id
                ))
            })?;
            compute_trial_measures(t, s)
        })
        .collect::<Result<_>>()?;
    MeasureTable::from_rows(per_trial.into_iter().flatten().collect())
}

const TABLE_HEADER: [&str; 13] = [
    "participant_id",
    "trial_id",
    "stimulus_id",
    "condition",
    "ia_index",
    "ffd_ms",
    "frd_ms",
    "gp_ms",
    "dt_ms",
    "rr_ms",
    "ps",
    "fc",
    "reg_count",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_measure_table<W: Write>(table: &MeasureTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_HEADER).map_err(csv_err)?;
    for r in &table.rows {
        let m = &r.measures;
        w.write_record([
            r.key.participant_id.clone(),
            r.key.trial_id.clone(),
            r.key.stimulus_id.clone(),
            r.key.condition.to_string(),
            r.key.ia_index.to_string(),
            opt(m.ffd_ms),
            opt(m.frd_ms),
            opt(m.gp_ms),
            opt(m.dt_ms),
            opt(m.rr_ms),
            opt(m.ps),
            m.fc.to_string(),
            m.reg_count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn read_measure_table(path: &Path) -> Result<MeasureTable> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_measure_table(&content, &path.display().to_string())
}

pub fn parse_measure_table(content: &str, file: &str) -> Result<MeasureTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(file, 1, "<header>", e.to_string()))?
        .clone();
    let mut col = BTreeMap::new();
    for name in TABLE_HEADER {
        let i = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(file, 1, name, "missing column"))?;
        col.insert(name, i);
    }
    let mut rows = Vec::new();
    for result in reader.records() {
        let rec = result.map_err(|e| Error::parse(file, 0, "<row>", e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let get = |name: &str| rec.get(col[name]).unwrap_or("");
        let fail = |name: &str| Error::parse(file, line, name, format!("bad value `{}`", get(name)));
        let opt_int = |name: &str| -> Result<Option<i64>> {
            match get(name) {
                "" => Ok(None),
                v => v.parse().map(Some).map_err(|_| fail(name)),
            }
        };
        let ps = match get("ps") {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|_| fail("ps"))?),
        };
        rows.push(MeasureRow {
            key: MeasureKey {
                participant_id: get("participant_id").to_string(),
                trial_id: get("trial_id").to_string(),
                stimulus_id: get("stimulus_id").to_string(),
                condition: get("condition").parse().map_err(|_| fail("condition"))?,
                ia_index: get("ia_index").parse().map_err(|_| fail("ia_index"))?,
            },
            measures: IAMeasures {
                ffd_ms: opt_int("ffd_ms")?,
                frd_ms: opt_int("frd_ms")?,
                gp_ms: opt_int("gp_ms")?,
                dt_ms: opt_int("dt_ms")?,
                rr_ms: opt_int("rr_ms")?,
                ps,
                fc: get("fc").parse().map_err(|_| fail("fc"))?,
                reg_count: get("reg_count").parse().map_err(|_| fail("reg_count"))?,
            },
        });
    }
    MeasureTable::from_rows(rows)
}
