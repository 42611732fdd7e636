//! Per-IA saliency maps aggregated from reading measures.
//!
//! Three aggregations are provided: participant-wise z-scores averaged over
//! participants, plain per-IA means, and residuals from a random-intercept
//! model that regresses out word length, frequency and whether the preceding
//! IA was viewed. Maps can be contrasted (incongruent − congruent) and
//! binarised at their median.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{csv_err, Condition};
use crate::metrics::{Measure, MeasureTable};
use crate::stats::{fit_random_intercept_lmm, LmmConfig, LmmDesign};
use crate::stimulus::Stimulus;

/// `(stimulus_id, ia_index)`
pub type IaKey = (String, usize);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaliencyMap {
    pub source: String,
    pub scores: BTreeMap<IaKey, f64>,
    /// Participants contributing at least one observation.
    pub n_participants: usize,
    /// Diagnostics raised during aggregation (also logged).
    pub warnings: Vec<String>,
}

impl SaliencyMap {
    pub fn new(source: impl Into<String>, scores: BTreeMap<IaKey, f64>) -> Result<Self> {
        let source = source.into();
        if let Some(((s, i), v)) = scores.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("{source}: non-finite score {v} for ({s}, {i})")));
        }
        Ok(SaliencyMap {
            source,
            scores,
            n_participants: 0,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, stimulus_id: &str, ia_index: usize) -> Option<f64> {
        self.scores.get(&(stimulus_id.to_string(), ia_index)).copied()
    }

    fn warn(&mut self, message: String) {
        log::warn!("{}: {message}", self.source);
        self.warnings.push(message);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinaryMap {
    pub source: String,
    pub salient: BTreeSet<IaKey>,
    /// All keys of the originating map.
    pub universe: BTreeSet<IaKey>,
    pub threshold_value: f64,
}

impl BinaryMap {
    pub fn is_salient(&self, stimulus_id: &str, ia_index: usize) -> bool {
        self.salient.contains(&(stimulus_id.to_string(), ia_index))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionFilter {
    All,
    Congruent,
    Incongruent,
}

impl ConditionFilter {
    pub fn as_str(self) -> &'static str {
        match self {
            ConditionFilter::All => "all",
            ConditionFilter::Congruent => "congruent",
            ConditionFilter::Incongruent => "incongruent",
        }
    }

    pub fn accepts(self, c: Condition) -> bool {
        match self {
            ConditionFilter::All => true,
            ConditionFilter::Congruent => c == Condition::Congruent,
            ConditionFilter::Incongruent => c == Condition::Incongruent,
        }
    }
}

impl FromStr for ConditionFilter {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(ConditionFilter::All),
            "congruent" => Ok(ConditionFilter::Congruent),
            "incongruent" => Ok(ConditionFilter::Incongruent),
            other => Err(format!("unknown condition filter `{other}` (expected all|congruent|incongruent)")),
        }
    }
}

/// Denominator of the per-participant standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SdVariant {
    /// divide by n
    #[default]
    Population,
    /// divide by n − 1
    Sample,
}

impl FromStr for SdVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "population" => Ok(SdVariant::Population),
            "sample" => Ok(SdVariant::Sample),
            other => Err(format!("unknown SD variant `{other}` (expected population|sample)")),
        }
    }
}

impl fmt::Display for SdVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SdVariant::Population => "population",
            SdVariant::Sample => "sample",
        })
    }
}

/// Per-participant list of (IA key, value) for rows passing the filter.
struct Observations {
    by_participant: BTreeMap<String, Vec<(IaKey, f64)>>,
    /// Every (stimulus, IA) present in the filtered table, observed or not.
    keys: BTreeSet<IaKey>,
}

fn observations(table: &MeasureTable, measure: Measure, filter: ConditionFilter) -> Result<Observations> {
    let mut by_participant: BTreeMap<String, Vec<(IaKey, f64)>> = BTreeMap::new();
    let mut keys = BTreeSet::new();
    for row in table.rows.iter().filter(|r| filter.accepts(r.key.condition)) {
        let key = (row.key.stimulus_id.clone(), row.key.ia_index);
        keys.insert(key.clone());
        if let Some(v) = measure.value(&row.measures) {
            by_participant
                .entry(row.key.participant_id.clone())
                .or_default()
                .push((key, v));
        }
    }
    if by_participant.is_empty() {
        return Err(Error::invalid(format!(
            "no `{measure}` observations for condition filter `{}`",
            filter.as_str()
        )));
    }
    Ok(Observations { by_participant, keys })
}

/// Average per-participant values per key: first within a participant (a
/// participant may see a stimulus more than once), then across participants.
fn average_over_participants(
    source: String,
    per_participant: &BTreeMap<String, Vec<(IaKey, f64)>>,
    keys: &BTreeSet<IaKey>,
    mut warnings: Vec<String>,
) -> Result<SaliencyMap> {
    let mut acc: BTreeMap<&IaKey, (f64, usize)> = BTreeMap::new();
    for values in per_participant.values() {
        let mut own: BTreeMap<&IaKey, (f64, usize)> = BTreeMap::new();
        for (k, v) in values {
            let e = own.entry(k).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        for (k, (sum, n)) in own {
            let e = acc.entry(k).or_insert((0.0, 0));
            e.0 += sum / n as f64;
            e.1 += 1;
        }
    }
    let scores = acc
        .into_iter()
        .map(|(k, (sum, n))| (k.clone(), sum / n as f64))
        .collect();
    let mut map = SaliencyMap::new(source, scores)?;
    map.n_participants = per_participant.len();
    map.warnings.append(&mut warnings);
    let unobserved: Vec<&IaKey> = keys.iter().filter(|k| !map.scores.contains_key(*k)).collect();
    for (s, i) in unobserved {
        map.warn(format!("IA ({s}, {i}) observed by no participant; score absent"));
    }
    Ok(map)
}

pub fn source_label(measure: Measure, agg: &str, condition: &str) -> String {
    format!("{measure}/{agg}/{condition}")
}

/// Z-score every observation against its participant's mean and SD, then
/// average per IA. The participant's μ/σ use all their observations of the
/// measure in `table` (every condition), so maps filtered to different
/// conditions share one scale and can be subtracted.
pub fn zscore_aggregate(
    table: &MeasureTable,
    measure: Measure,
    filter: ConditionFilter,
    sd: SdVariant,
) -> Result<SaliencyMap> {
    let all = observations(table, measure, ConditionFilter::All)?;
    let selected = observations(table, measure, filter)?;
    let mut warnings = Vec::new();
    let mut z: BTreeMap<String, Vec<(IaKey, f64)>> = BTreeMap::new();
    for (participant, values) in &selected.by_participant {
        let pool: Vec<f64> = all.by_participant[participant].iter().map(|(_, v)| *v).collect();
        let n = pool.len() as f64;
        let mu = pool.iter().sum::<f64>() / n;
        let ss: f64 = pool.iter().map(|v| (v - mu).powi(2)).sum();
        let denom = match sd {
            SdVariant::Population => n,
            SdVariant::Sample => n - 1.0,
        };
        let sigma = if denom > 0.0 { (ss / denom).sqrt() } else { 0.0 };
        let scored = if sigma > 0.0 {
            values.iter().map(|(k, v)| (k.clone(), (v - mu) / sigma)).collect()
        } else {
            let msg = format!("participant `{participant}` has zero `{measure}` variance; z-scores set to 0");
            log::warn!("{msg}");
            warnings.push(msg);
            values.iter().map(|(k, _)| (k.clone(), 0.0)).collect()
        };
        z.insert(participant.clone(), scored);
    }
    average_over_participants(
        source_label(measure, "zscore", filter.as_str()),
        &z,
        &selected.keys,
        warnings,
    )
}

pub fn raw_aggregate(table: &MeasureTable, measure: Measure, filter: ConditionFilter) -> Result<SaliencyMap> {
    let obs = observations(table, measure, filter)?;
    average_over_participants(
        source_label(measure, "raw", filter.as_str()),
        &obs.by_participant,
        &obs.keys,
        Vec::new(),
    )
}

/// Row-aligned covariate columns for [`lme_adjusted_aggregate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    /// One column per name, each parallel to `MeasureTable::rows`.
    pub columns: Vec<Vec<f64>>,
}

impl Covariates {
    /// `previous_viewed` (0/1), `length` (letters) and `log_freq` per row.
    pub fn standard(table: &MeasureTable, stimuli: &[Stimulus]) -> Result<Self> {
        let by_id: BTreeMap<&str, &Stimulus> = stimuli.iter().map(|s| (s.stimulus_id.as_str(), s)).collect();
        let mut length = Vec::with_capacity(table.len());
        let mut log_freq = Vec::with_capacity(table.len());
        for row in &table.rows {
            let stim = by_id
                .get(row.key.stimulus_id.as_str())
                .ok_or_else(|| Error::invalid(format!("measure table references unknown stimulus `{}`", row.key.stimulus_id)))?;
            if row.key.ia_index >= stim.ias.len() {
                return Err(Error::invalid(format!(
                    "measure table references IA {} of `{}`, which has {} IAs",
                    row.key.ia_index,
                    stim.stimulus_id,
                    stim.ias.len()
                )));
            }
            length.push(stim.ia_length(row.key.ia_index) as f64);
            log_freq.push(stim.ia_log_freq(row.key.ia_index));
        }
        let prev = table.previous_viewed().into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
        Ok(Covariates {
            names: vec!["previous_viewed".into(), "length".into(), "log_freq".into()],
            columns: vec![prev, length, log_freq],
        })
    }
}

/// Fit `measure ~ 1 + covariates + (1 | participant)` on the filtered rows
/// and score each IA by its mean conditional residual
/// `y − Xβ̂ − b̂_participant`, in the measure's units. Covariates that are
/// constant over the fitted rows are dropped with a warning.
pub fn lme_adjusted_aggregate(
    table: &MeasureTable,
    measure: Measure,
    filter: ConditionFilter,
    covariates: &Covariates,
    config: &LmmConfig,
) -> Result<SaliencyMap> {
    if covariates.names.len() != covariates.columns.len()
        || covariates.columns.iter().any(|c| c.len() != table.len())
    {
        return Err(Error::invalid("covariate columns must be parallel to the measure table rows"));
    }
    let mut rows = Vec::new();
    let mut keys = BTreeSet::new();
    for (i, row) in table.rows.iter().enumerate() {
        if !filter.accepts(row.key.condition) {
            continue;
        }
        keys.insert((row.key.stimulus_id.clone(), row.key.ia_index));
        if let Some(v) = measure.value(&row.measures) {
            rows.push((i, v));
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!(
            "no `{measure}` observations for condition filter `{}`",
            filter.as_str()
        )));
    }

    let mut warnings = Vec::new();
    let mut names = vec!["intercept".to_string()];
    let mut columns = vec![vec![1.0; rows.len()]];
    for (name, col) in covariates.names.iter().zip(&covariates.columns) {
        let values: Vec<f64> = rows.iter().map(|&(i, _)| col[i]).collect();
        if values.iter().all(|v| *v == values[0]) {
            let msg = format!("covariate `{name}` is constant over the fitted rows; dropped");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        names.push(name.clone());
        columns.push(values);
    }
    let design = LmmDesign::new(
        rows.iter().map(|&(_, v)| v).collect(),
        names,
        columns,
        rows.iter().map(|&(i, _)| table.rows[i].key.participant_id.clone()).collect(),
    )?;
    let (scaled, norm) = design.normalized();
    let fit = fit_random_intercept_lmm(&scaled, config)?;
    if fit.boundary {
        let msg = "participant intercept variance estimated at 0 (singular fit)".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let residuals = fit.conditional_residuals(&scaled);

    let mut per_participant: BTreeMap<String, Vec<(IaKey, f64)>> = BTreeMap::new();
    for (&(i, _), r) in rows.iter().zip(residuals) {
        let k = &table.rows[i].key;
        per_participant
            .entry(k.participant_id.clone())
            .or_default()
            .push(((k.stimulus_id.clone(), k.ia_index), r * norm.response_scale));
    }
    average_over_participants(
        source_label(measure, "lme", filter.as_str()),
        &per_participant,
        &keys,
        warnings,
    )
}

/// Pointwise `incong − cong`.
pub fn congruency_contrast(incong: &SaliencyMap, cong: &SaliencyMap) -> Result<SaliencyMap> {
    let only_a: Vec<String> = incong
        .scores
        .keys()
        .filter(|k| !cong.scores.contains_key(*k))
        .map(|(s, i)| format!("({s}, {i})"))
        .collect();
    let only_b: Vec<String> = cong
        .scores
        .keys()
        .filter(|k| !incong.scores.contains_key(*k))
        .map(|(s, i)| format!("({s}, {i})"))
        .collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(Error::invalid(format!(
            "contrast maps cover different IAs; missing from `{}`: [{}]; missing from `{}`: [{}]",
            cong.source,
            only_a.join(", "),
            incong.source,
            only_b.join(", ")
        )));
    }
    let scores = incong
        .scores
        .iter()
        .map(|(k, a)| (k.clone(), a - cong.scores[k]))
        .collect();
    let mut map = SaliencyMap::new(contrast_label(&incong.source, &cong.source), scores)?;
    map.n_participants = incong.n_participants.max(cong.n_participants);
    map.warnings = incong.warnings.iter().chain(&cong.warnings).cloned().collect();
    Ok(map)
}

/// `dt/zscore/incongruent` and `dt/zscore/congruent` → `dt/zscore/contrast`.
fn contrast_label(a: &str, b: &str) -> String {
    match (a.rsplit_once('/'), b.rsplit_once('/')) {
        (Some((pa, _)), Some((pb, _))) if pa == pb => format!("{pa}/contrast"),
        _ => format!("{a} - {b}"),
    }
}

/// Median with the midpoint convention for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Keys scoring strictly above the map's median.
pub fn binarize_median(map: &SaliencyMap) -> Result<BinaryMap> {
    let values: Vec<f64> = map.scores.values().copied().collect();
    let threshold = median(&values).ok_or_else(|| Error::invalid(format!("cannot binarise empty map `{}`", map.source)))?;
    Ok(BinaryMap {
        source: map.source.clone(),
        salient: map
            .scores
            .iter()
            .filter(|(_, v)| **v > threshold)
            .map(|(k, _)| k.clone())
            .collect(),
        universe: map.scores.keys().cloned().collect(),
        threshold_value: threshold,
    })
}

pub fn write_saliency_map<W: Write>(map: &SaliencyMap, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "stimulus_id", "ia_index", "score"]).map_err(csv_err)?;
    for ((s, i), v) in &map.scores {
        w.write_record([map.source.as_str(), s, &i.to_string(), &v.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

pub fn write_binary_map<W: Write>(map: &BinaryMap, mut out: W) -> Result<()> {
    writeln!(out, "# threshold = {}", map.threshold_value).map_err(|e| Error::io("<output>", e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "stimulus_id", "ia_index", "salient"]).map_err(csv_err)?;
    for k in &map.universe {
        let flag = if map.salient.contains(k) { "1" } else { "0" };
        w.write_record([map.source.as_str(), &k.0, &k.1.to_string(), flag])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

/// Read one or more maps (grouped by the `source` column, in first-seen order).
pub fn read_saliency_maps(path: &Path) -> Result<Vec<SaliencyMap>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_saliency_maps(&content, &path.display().to_string())
}

pub fn parse_saliency_maps(content: &str, file: &str) -> Result<Vec<SaliencyMap>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(file, 1, "<header>", e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(file, 1, name, "missing column"))
    };
    let (c_src, c_stim, c_ia, c_score) = (col("source")?, col("stimulus_id")?, col("ia_index")?, col("score")?);
    let mut order: Vec<String> = Vec::new();
    let mut maps: BTreeMap<String, BTreeMap<IaKey, f64>> = BTreeMap::new();
    for result in reader.records() {
        let rec = result.map_err(|e| Error::parse(file, 0, "<row>", e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let source = rec[c_src].to_string();
        let ia: usize = rec[c_ia]
            .parse()
            .map_err(|_| Error::parse(file, line, "ia_index", format!("bad value `{}`", &rec[c_ia])))?;
        let score: f64 = rec[c_score]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::parse(file, line, "score", format!("bad value `{}`", &rec[c_score])))?;
        if !maps.contains_key(&source) {
            order.push(source.clone());
        }
        let key = (rec[c_stim].to_string(), ia);
        if maps.entry(source).or_default().insert(key, score).is_some() {
            return Err(Error::parse(file, line, "ia_index", "duplicate (source, stimulus_id, ia_index)"));
        }
    }
    order
        .into_iter()
        .map(|s| {
            let scores = maps.remove(&s).unwrap_or_default();
            SaliencyMap::new(s, scores)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{IAMeasures, MeasureKey, MeasureRow};

    pub(crate) fn row(participant: &str, stim: &str, cond: Condition, ia: usize, dt: Option<i64>) -> MeasureRow {
        MeasureRow {
            key: MeasureKey {
                participant_id: participant.into(),
                trial_id: format!("{participant}-{stim}"),
                stimulus_id: stim.into(),
                condition: cond,
                ia_index: ia,
            },
            measures: IAMeasures {
                ffd_ms: dt,
                frd_ms: dt,
                gp_ms: dt,
                dt_ms: dt,
                rr_ms: dt.map(|_| 0),
                ps: None,
                fc: dt.map_or(0, |_| 1),
                reg_count: 0,
            },
        }
    }

    fn table(rows: Vec<MeasureRow>) -> MeasureTable {
        MeasureTable::from_rows(rows).unwrap()
    }

    #[test]
    fn zscore_single_participant() {
        let t = table(
            [100, 200, 300, 400]
                .iter()
                .enumerate()
                .map(|(i, &v)| row("p1", "s", Condition::Congruent, i, Some(v)))
                .collect(),
        );
        let m = zscore_aggregate(&t, Measure::Dt, ConditionFilter::All, SdVariant::Population).unwrap();
        assert!((m.get("s", 2).unwrap() - 0.447_213_595_5).abs() < 1e-9);
        assert_eq!(m.n_participants, 1);
        assert_eq!(m.source, "dt/zscore/all");
    }

    #[test]
    fn zscore_constant_participant_warns() {
        let t = table((0..3).map(|i| row("p", "s", Condition::Congruent, i, Some(250))).collect());
        let m = zscore_aggregate(&t, Measure::Dt, ConditionFilter::All, SdVariant::Population).unwrap();
        assert!(m.scores.values().all(|v| *v == 0.0));
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn skipped_ias_are_excluded_and_flagged() {
        let t = table(vec![
            row("p1", "s", Condition::Congruent, 0, Some(100)),
            row("p1", "s", Condition::Congruent, 1, None),
            row("p2", "s", Condition::Congruent, 0, Some(300)),
            row("p2", "s", Condition::Congruent, 1, None),
        ]);
        let m = raw_aggregate(&t, Measure::Dt, ConditionFilter::All).unwrap();
        assert_eq!(m.get("s", 0), Some(200.0));
        assert_eq!(m.get("s", 1), None);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn condition_filter_and_contrast() {
        let t = table(vec![
            row("p1", "a", Condition::Congruent, 0, Some(100)),
            row("p1", "b", Condition::Incongruent, 0, Some(400)),
            row("p2", "a", Condition::Incongruent, 0, Some(300)),
            row("p2", "b", Condition::Congruent, 0, Some(200)),
        ]);
        let inc = raw_aggregate(&t, Measure::Dt, ConditionFilter::Incongruent).unwrap();
        let con = raw_aggregate(&t, Measure::Dt, ConditionFilter::Congruent).unwrap();
        let c = congruency_contrast(&inc, &con).unwrap();
        assert_eq!(c.get("a", 0), Some(200.0));
        assert_eq!(c.get("b", 0), Some(200.0));
        assert_eq!(c.source, "dt/raw/contrast");
    }

    #[test]
    fn contrast_key_mismatch_lists_keys() {
        let a = SaliencyMap::new("a", [(("s".to_string(), 0), 1.0), (("s".to_string(), 1), 1.0)].into()).unwrap();
        let b = SaliencyMap::new("b", [(("s".to_string(), 0), 1.0)].into()).unwrap();
        let err = congruency_contrast(&a, &b).unwrap_err().to_string();
        assert!(err.contains("(s, 1)"), "{err}");
    }

    fn map_of(values: &[f64]) -> SaliencyMap {
        SaliencyMap::new(
            "m",
            values.iter().enumerate().map(|(i, v)| (("s".to_string(), i), *v)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn median_binarisation() {
        let b = binarize_median(&map_of(&[1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        assert_eq!(b.threshold_value, 3.0);
        assert_eq!(b.salient, [("s".to_string(), 3), ("s".to_string(), 4)].into());
        assert!(binarize_median(&map_of(&[2.0; 4])).unwrap().salient.is_empty());
        let ties = binarize_median(&map_of(&[1.0, 3.0, 3.0, 5.0])).unwrap();
        assert_eq!(ties.salient, [("s".to_string(), 3)].into());
        assert!(binarize_median(&map_of(&[])).is_err());
    }

    #[test]
    fn lme_intercept_only_equals_centred_raw() {
        // balanced: every participant reads every IA
        let vals = [[120, 250, 310], [180, 260, 420], [90, 200, 330]];
        let mut rows = Vec::new();
        for (p, vs) in vals.iter().enumerate() {
            for (i, v) in vs.iter().enumerate() {
                rows.push(row(&format!("p{p}"), "s", Condition::Congruent, i, Some(*v)));
            }
        }
        let t = table(rows);
        let zero = Covariates {
            names: vec!["length".into()],
            columns: vec![vec![0.0; t.len()]],
        };
        let m = lme_adjusted_aggregate(&t, Measure::Dt, ConditionFilter::All, &zero, &LmmConfig::default()).unwrap();
        let raw = raw_aggregate(&t, Measure::Dt, ConditionFilter::All).unwrap();
        let grand: f64 = raw.scores.values().sum::<f64>() / 3.0;
        for (k, v) in &raw.scores {
            assert!((m.scores[k] - (v - grand)).abs() < 1e-8, "{k:?}");
        }
        assert!(m.warnings.iter().any(|w| w.contains("length")));
    }

    #[test]
    fn saliency_csv_round_trip() {
        let m = map_of(&[0.25, -1.5, 3.0]);
        let mut buf = Vec::new();
        write_saliency_map(&m, &mut buf).unwrap();
        let back = parse_saliency_maps(std::str::from_utf8(&buf).unwrap(), "mem").unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].scores, m.scores);

        let mut buf = Vec::new();
        write_binary_map(&binarize_median(&m).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# threshold = 0.25\nsource,stimulus_id,ia_index,salient\n"));
        assert!(text.contains("m,s,2,1"));
    }
}
