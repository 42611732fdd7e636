//! Comparison of saliency sources: token-score alignment, Jaccard overlap,
//! three-way Venn partitions, POS profiles and Pearson correlations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::csv_err;
use crate::saliency::{binarize_median, BinaryMap, IaKey, SaliencyMap};
use crate::stats::pearson_r;
use crate::stimulus::Stimulus;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    Surprisal,
    IntegratedGradients,
    HumanAnnotation,
    Other(String),
}

impl TokenSource {
    pub fn as_str(&self) -> &str {
        match self {
            TokenSource::Surprisal => "surprisal",
            TokenSource::IntegratedGradients => "integrated_gradients",
            TokenSource::HumanAnnotation => "human_annotation",
            TokenSource::Other(s) => s,
        }
    }

    /// Short label used as the saliency-map source.
    pub fn label(&self) -> &str {
        match self {
            TokenSource::Surprisal => "surprisal",
            TokenSource::IntegratedGradients => "ig",
            TokenSource::HumanAnnotation => "human",
            TokenSource::Other(s) => s,
        }
    }
}

impl fmt::Display for TokenSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenSource {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "surprisal" => TokenSource::Surprisal,
            "integrated_gradients" | "ig" => TokenSource::IntegratedGradients,
            "human_annotation" | "human" => TokenSource::HumanAnnotation,
            other => TokenSource::Other(other.to_string()),
        })
    }
}

/// Token-level scores from one source. Key: `(stimulus_id, token_index)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenScoreSet {
    pub source: TokenSource,
    pub scores: BTreeMap<(String, usize), f64>,
    /// `# key: value` header lines of the score file (e.g. `units: nats`).
    pub metadata: BTreeMap<String, String>,
}

impl TokenScoreSet {
    pub fn new(source: TokenSource, scores: BTreeMap<(String, usize), f64>) -> Self {
        TokenScoreSet {
            source,
            scores,
            metadata: BTreeMap::new(),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_token_score_file(path: &Path) -> Result<Vec<TokenScoreSet>> {
    parse_token_scores(&read(path)?, &path.display().to_string())
}

/// Token score file: `# key: value` header lines, then CSV with columns
/// `source, stimulus_id, token_index, score`. One set per distinct source.
pub fn parse_token_scores(content: &str, file: &str) -> Result<Vec<TokenScoreSet>> {
    let mut metadata = BTreeMap::new();
    for line in content.lines().take_while(|l| l.trim_start().starts_with('#')) {
        if let Some((k, v)) = line.trim_start().trim_start_matches('#').split_once(':') {
            metadata.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    if !metadata.contains_key("units") {
        log::warn!("{file}: no `# units:` header line");
    }
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
    let (c_src, c_stim, c_tok, c_score) = (col("source")?, col("stimulus_id")?, col("token_index")?, col("score")?);
    let mut sets: BTreeMap<TokenSource, TokenScoreSet> = BTreeMap::new();
    for result in reader.records() {
        let rec = result.map_err(|e| Error::parse(file, 0, "<row>", e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let source: TokenSource = rec[c_src].parse().unwrap_or_else(|e| match e {});
        let token: usize = rec[c_tok]
            .parse()
            .map_err(|_| Error::parse(file, line, "token_index", format!("bad value `{}`", &rec[c_tok])))?;
        let score: f64 = rec[c_score]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::parse(file, line, "score", format!("bad value `{}`", &rec[c_score])))?;
        if source == TokenSource::HumanAnnotation && !(0.0..=1.0).contains(&score) {
            return Err(Error::parse(file, line, "score", "human_annotation scores must lie in [0, 1]"));
        }
        let set = sets.entry(source.clone()).or_insert_with(|| TokenScoreSet {
            source,
            scores: BTreeMap::new(),
            metadata: metadata.clone(),
        });
        if set.scores.insert((rec[c_stim].to_string(), token), score).is_some() {
            return Err(Error::parse(file, line, "token_index", "duplicate (source, stimulus_id, token_index)"));
        }
    }
    Ok(sets.into_values().collect())
}

pub fn write_token_scores<W: Write>(sets: &[TokenScoreSet], units: &str, mut out: W) -> Result<()> {
    writeln!(out, "# units: {units}").map_err(|e| Error::io("<output>", e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "stimulus_id", "token_index", "score"]).map_err(csv_err)?;
    for set in sets {
        for ((s, t), v) in &set.scores {
            w.write_record([set.source.as_str(), s, &t.to_string(), &v.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

pub fn parse_annotation_file(path: &Path) -> Result<TokenScoreSet> {
    parse_annotations(&read(path)?, &path.display().to_string())
}

/// Annotation file with columns `stimulus_id, token_index, annotator_id,
/// highlighted` (0/1). Each token's score is the fraction of its annotators
/// who highlighted it.
pub fn parse_annotations(content: &str, file: &str) -> Result<TokenScoreSet> {
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
    let (c_stim, c_tok, c_ann, c_hl) = (col("stimulus_id")?, col("token_index")?, col("annotator_id")?, col("highlighted")?);
    let mut seen = BTreeSet::new();
    let mut counts: BTreeMap<(String, usize), (u32, u32)> = BTreeMap::new();
    for result in reader.records() {
        let rec = result.map_err(|e| Error::parse(file, 0, "<row>", e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let token: usize = rec[c_tok]
            .parse()
            .map_err(|_| Error::parse(file, line, "token_index", format!("bad value `{}`", &rec[c_tok])))?;
        let hl = match &rec[c_hl] {
            "0" => 0,
            "1" => 1,
            v => return Err(Error::parse(file, line, "highlighted", format!("expected 0 or 1, got `{v}`"))),
        };
        let key = (rec[c_stim].to_string(), token);
        if !seen.insert((key.clone(), rec[c_ann].to_string())) {
            return Err(Error::parse(file, line, "annotator_id", "duplicate (stimulus_id, token_index, annotator_id)"));
        }
        let e = counts.entry(key).or_insert((0, 0));
        e.0 += hl;
        e.1 += 1;
    }
    let scores = counts
        .into_iter()
        .map(|(k, (hl, n))| (k, hl as f64 / n as f64))
        .collect();
    Ok(TokenScoreSet::new(TokenSource::HumanAnnotation, scores))
}

/// Per-IA scores for one stimulus: surprisal is summed over the IA's
/// tokens, integrated gradients and annotation fractions are averaged.
pub fn align_token_scores(scores: &TokenScoreSet, stimulus: &Stimulus) -> Result<BTreeMap<IaKey, f64>> {
    let sum = match &scores.source {
        TokenSource::Surprisal => true,
        TokenSource::IntegratedGradients | TokenSource::HumanAnnotation => false,
        TokenSource::Other(s) => {
            return Err(Error::invalid(format!(
                "unknown token score source `{s}` (expected surprisal|integrated_gradients|human_annotation)"
            )))
        }
    };
    let id = &stimulus.stimulus_id;
    let mut out = BTreeMap::new();
    for ia in &stimulus.ias {
        let mut total = 0.0;
        for &t in &ia.token_indices {
            total += scores.scores.get(&(id.clone(), t)).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "{}: no score for token {t} (`{}`) of stimulus `{id}`",
                    scores.source, stimulus.tokens[t].text
                ))
            })?;
        }
        let v = if sum { total } else { total / ia.token_indices.len() as f64 };
        out.insert((id.clone(), ia.ia_index), v);
    }
    Ok(out)
}

/// Align a score set over every stimulus it mentions. Token indices must be
/// valid for their stimulus.
pub fn align_all(scores: &TokenScoreSet, stimuli: &[Stimulus]) -> Result<SaliencyMap> {
    let by_id: BTreeMap<&str, &Stimulus> = stimuli.iter().map(|s| (s.stimulus_id.as_str(), s)).collect();
    let mut mentioned = BTreeSet::new();
    for (s, t) in scores.scores.keys() {
        let stim = by_id
            .get(s.as_str())
            .ok_or_else(|| Error::invalid(format!("{}: unknown stimulus `{s}`", scores.source)))?;
        if *t >= stim.tokens.len() {
            return Err(Error::invalid(format!(
                "{}: token index {t} out of range for `{s}` ({} tokens)",
                scores.source,
                stim.tokens.len()
            )));
        }
        mentioned.insert(s.as_str());
    }
    let mut all = BTreeMap::new();
    for s in mentioned {
        all.extend(align_token_scores(scores, by_id[s])?);
    }
    SaliencyMap::new(scores.source.label(), all)
}

/// `|a ∩ b| / |a ∪ b|`, 1.0 when both are empty.
pub fn jaccard(a: &BinaryMap, b: &BinaryMap) -> f64 {
    let inter = a.salient.intersection(&b.salient).count();
    let union = a.salient.union(&b.salient).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Region counts of a three-set Venn diagram, indexed by membership mask
/// (bit 0 = first map, bit 1 = second, bit 2 = third; index 0 unused).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VennCounts {
    pub regions: [usize; 8],
}

impl VennCounts {
    pub fn region(&self, mask: usize) -> usize {
        self.regions[mask]
    }

    pub fn union(&self) -> usize {
        self.regions[1..].iter().sum()
    }

    fn containing(&self, mask: usize) -> usize {
        (1..8).filter(|m| m & mask == mask).map(|m| self.regions[m]).sum()
    }

    /// Jaccard between maps `i` and `j` reconstructed from region counts.
    pub fn pairwise_jaccard(&self, i: usize, j: usize) -> f64 {
        let (bi, bj) = (1 << i, 1 << j);
        let inter = self.containing(bi | bj);
        let union: usize = (1..8).filter(|m| m & (bi | bj) != 0).map(|m| self.regions[m]).sum();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// `|a ∩ b ∩ c| / |a ∪ b ∪ c|`, 1.0 when all are empty.
    pub fn three_way_iou(&self) -> f64 {
        match self.union() {
            0 => 1.0,
            u => self.regions[7] as f64 / u as f64,
        }
    }
}

pub fn venn_partition(maps: [&BinaryMap; 3]) -> VennCounts {
    let keys: BTreeSet<&IaKey> = maps.iter().flat_map(|m| m.salient.iter()).collect();
    let mut regions = [0; 8];
    for k in keys {
        let mask = maps
            .iter()
            .enumerate()
            .filter(|(_, m)| m.salient.contains(k))
            .fold(0, |acc, (i, _)| acc | (1 << i));
        regions[mask] += 1;
    }
    VennCounts { regions }
}

/// Collapse a Penn tag to its two-letter family (`VBG` → `VB`); empty → `UNK`.
pub fn coarse_pos(tag: &str) -> String {
    let tag = tag.trim();
    if tag.is_empty() {
        "UNK".to_string()
    } else {
        tag.chars().take(2).collect::<String>().to_ascii_uppercase()
    }
}

/// Proportion of each coarse POS tag over all tokens inside salient IAs.
pub fn pos_distribution(map: &BinaryMap, stimuli: &[Stimulus]) -> Result<BTreeMap<String, f64>> {
    let by_id: BTreeMap<&str, &Stimulus> = stimuli.iter().map(|s| (s.stimulus_id.as_str(), s)).collect();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut untagged = 0;
    for (s, i) in &map.salient {
        let stim = by_id
            .get(s.as_str())
            .ok_or_else(|| Error::invalid(format!("{}: unknown stimulus `{s}`", map.source)))?;
        if *i >= stim.ias.len() {
            return Err(Error::invalid(format!("{}: IA {i} out of range for `{s}`", map.source)));
        }
        for tok in stim.ia_tokens(*i) {
            if tok.pos_tag.trim().is_empty() {
                untagged += 1;
            }
            *counts.entry(coarse_pos(&tok.pos_tag)).or_default() += 1;
        }
    }
    if untagged > 0 {
        log::warn!("{}: {untagged} salient tokens lack a POS tag; counted as UNK", map.source);
    }
    let total: usize = counts.values().sum();
    Ok(counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / total as f64))
        .collect())
}

/// The `k` most frequent tags, ties broken alphabetically.
pub fn top_k_pos(hist: &BTreeMap<String, f64>, k: usize) -> Vec<(String, f64)> {
    let mut v: Vec<(String, f64)> = hist.iter().map(|(t, p)| (t.clone(), *p)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub sources: Vec<String>,
    /// `None` where fewer than 2 keys are shared or either side is constant.
    pub values: Vec<Vec<Option<f64>>>,
}

/// Pairwise Pearson r on the keys both maps score.
pub fn pair_correlation(a: &SaliencyMap, b: &SaliencyMap) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = a
        .scores
        .iter()
        .filter_map(|(k, v)| b.scores.get(k).map(|w| (*v, *w)))
        .unzip();
    if x.len() < 2 {
        return None;
    }
    pearson_r(&x, &y).ok().flatten()
}

pub fn correlation_matrix(maps: &[SaliencyMap]) -> CorrelationMatrix {
    let n = maps.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let computed: Vec<((usize, usize), Option<f64>)> = pairs
        .par_iter()
        .map(|&(i, j)| ((i, j), pair_correlation(&maps[i], &maps[j])))
        .collect();
    let mut values = vec![vec![None; n]; n];
    for ((i, j), r) in computed {
        values[i][j] = r;
        values[j][i] = r;
    }
    CorrelationMatrix {
        sources: maps.iter().map(|m| m.source.clone()).collect(),
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VennReport {
    pub sources: [String; 3],
    pub counts: VennCounts,
    pub three_way_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub sources: Vec<String>,
    pub thresholds: Vec<f64>,
    pub jaccard: Vec<Vec<f64>>,
    pub venn: Option<VennReport>,
    pub pearson: CorrelationMatrix,
    pub pos_hist: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Binarise each map at its median and compute every comparison. The Venn
/// partition uses `venn` (indices into `maps`), or the first three maps.
pub fn build_comparison_report(
    maps: &[SaliencyMap],
    stimuli: &[Stimulus],
    venn: Option<[usize; 3]>,
) -> Result<ComparisonReport> {
    if maps.len() < 2 {
        return Err(Error::invalid("comparison needs at least 2 saliency maps"));
    }
    let mut labels = BTreeSet::new();
    if let Some(m) = maps.iter().find(|m| !labels.insert(m.source.as_str())) {
        return Err(Error::invalid(format!("duplicate saliency source `{}`", m.source)));
    }
    let binary = maps.iter().map(binarize_median).collect::<Result<Vec<_>>>()?;
    let jaccard = binary
        .iter()
        .map(|a| binary.iter().map(|b| jaccard(a, b)).collect())
        .collect();
    let venn_idx = match venn {
        Some(idx) => {
            if idx.iter().any(|&i| i >= maps.len()) {
                return Err(Error::invalid("Venn source index out of range"));
            }
            Some(idx)
        }
        None if maps.len() >= 3 => Some([0, 1, 2]),
        None => None,
    };
    let venn = venn_idx.map(|[a, b, c]| {
        let counts = venn_partition([&binary[a], &binary[b], &binary[c]]);
        VennReport {
            sources: [maps[a].source.clone(), maps[b].source.clone(), maps[c].source.clone()],
            three_way_iou: counts.three_way_iou(),
            counts,
        }
    });
    let mut pos_hist = BTreeMap::new();
    for b in &binary {
        pos_hist.insert(b.source.clone(), pos_distribution(b, stimuli)?);
    }
    Ok(ComparisonReport {
        sources: maps.iter().map(|m| m.source.clone()).collect(),
        thresholds: binary.iter().map(|b| b.threshold_value).collect(),
        jaccard,
        venn,
        pearson: correlation_matrix(maps),
        pos_hist,
    })
}

/// Square matrix as CSV with a leading `source` column; `None` is blank.
pub fn write_matrix_csv<W: Write, T: ToString>(sources: &[String], values: &[Vec<T>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["source".to_string()];
    header.extend(sources.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (s, row) in sources.iter().zip(values) {
        let mut rec = vec![s.clone()];
        rec.extend(row.iter().map(ToString::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

pub struct OptionCell(pub Option<f64>);

impl fmt::Display for OptionCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v}"),
            None => Ok(()),
        }
    }
}
