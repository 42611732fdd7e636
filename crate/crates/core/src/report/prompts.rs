use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::BinaryMap;
use crate::stats::{mean, mean_ci, MeanCi};
use crate::stimulus::{is_punctuation, Stimulus};

pub const MAX_SHOTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptItem {
    pub id: String,
    pub text: String,
    /// Gold label, one of the task's two labels.
    pub label: String,
}

impl PromptItem {
    pub fn from_stimulus(s: &Stimulus) -> Self {
        PromptItem {
            id: s.stimulus_id.clone(),
            text: s.text.clone(),
            label: s.style.label().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptSpec {
    pub labels: [String; 2],
    pub k_shots: usize,
    /// Saliency source for the "Important words" line; `None` is the baseline.
    pub source: Option<String>,
    pub seeds: Vec<u64>,
}

impl PromptSpec {
    pub fn validate(&self, n_items: usize) -> Result<()> {
        if self.k_shots > MAX_SHOTS {
            return Err(Error::invalid(format!("k_shots {} exceeds {MAX_SHOTS}", self.k_shots)));
        }
        if n_items == 0 || self.k_shots > n_items - 1 {
            return Err(Error::invalid(format!(
                "k_shots {} exceeds the {} available demonstrations",
                self.k_shots,
                n_items.saturating_sub(1)
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one round seed required"));
        }
        if self.labels[0] == self.labels[1] {
            return Err(Error::invalid("the two task labels must differ"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub query_id: String,
    pub seed: u64,
    pub demonstrations: Vec<String>,
    pub gold: String,
    pub text: String,
}

/// Lower-cased words of each salient IA of `stimulus`, punctuation dropped,
/// in reading order without duplicates.
pub fn important_words(stimulus: &Stimulus, map: &BinaryMap) -> Vec<String> {
    let mut seen = BTreeSet::new();
    stimulus
        .ias
        .iter()
        .filter(|ia| map.is_salient(&stimulus.stimulus_id, ia.ia_index))
        .filter_map(|ia| {
            let words: Vec<&str> = stimulus
                .ia_tokens(ia.ia_index)
                .map(|t| t.text.as_str())
                .filter(|t| !is_punctuation(t))
                .collect();
            (!words.is_empty()).then(|| words.join(" ").to_lowercase())
        })
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

pub fn important_words_by_item(stimuli: &[Stimulus], map: &BinaryMap) -> BTreeMap<String, Vec<String>> {
    stimuli
        .iter()
        .map(|s| (s.stimulus_id.clone(), important_words(s, map)))
        .collect()
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn push_block(out: &mut String, item: &PromptItem, important: Option<&[String]>, labels: &[String; 2], answer: bool) {
    out.push_str("Text: ");
    out.push_str(&one_line(&item.text));
    out.push('\n');
    if let Some(words) = important {
        out.push_str("Important words: ");
        out.push_str(&words.join(", "));
        out.push('\n');
    }
    out.push_str(&format!("{} or {}:", labels[0], labels[1]));
    if answer {
        out.push(' ');
        out.push_str(&item.label);
        out.push('\n');
    }
}

/// One prompt per item: task line, `k` demonstrations sampled (seeded,
/// without replacement) from the other items, then the query. With
/// `important = None` the "Important words" lines are omitted (baseline).
pub fn build_fewshot_prompts(
    items: &[PromptItem],
    important: Option<&BTreeMap<String, Vec<String>>>,
    labels: &[String; 2],
    k: usize,
    seed: u64,
) -> Result<Vec<Prompt>> {
    if items.is_empty() {
        return Err(Error::invalid("no prompt items"));
    }
    if k > items.len() - 1 {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} available demonstrations",
            items.len() - 1
        )));
    }
    let mut ids = BTreeSet::new();
    for item in items {
        if !ids.insert(item.id.as_str()) {
            return Err(Error::invalid(format!("duplicate prompt item `{}`", item.id)));
        }
        if !labels.contains(&item.label) {
            return Err(Error::invalid(format!(
                "item `{}` has label `{}`, expected {} or {}",
                item.id, item.label, labels[0], labels[1]
            )));
        }
    }
    let words_for = |item: &PromptItem| -> Result<Option<&[String]>> {
        match important {
            None => Ok(None),
            Some(map) => map
                .get(&item.id)
                .map(|w| Some(w.as_slice()))
                .ok_or_else(|| Error::invalid(format!("no important words for item `{}`", item.id))),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = format!("Decide whether the following text is {} or {}.\n", labels[0], labels[1]);
    let mut prompts = Vec::with_capacity(items.len());
    for (q, query) in items.iter().enumerate() {
        let pool: Vec<usize> = (0..items.len()).filter(|&i| i != q).collect();
        let demos: Vec<&PromptItem> = index::sample(&mut rng, pool.len(), k)
            .into_iter()
            .map(|i| &items[pool[i]])
            .collect();
        let mut text = task.clone();
        for d in &demos {
            push_block(&mut text, d, words_for(d)?, labels, true);
        }
        push_block(&mut text, query, words_for(query)?, labels, false);
        prompts.push(Prompt {
            id: format!("{}#{seed}", query.id),
            query_id: query.id.clone(),
            seed,
            demonstrations: demos.iter().map(|d| d.id.clone()).collect(),
            gold: query.label.clone(),
            text,
        });
    }
    Ok(prompts)
}

/// One prompt set per round seed.
pub fn build_rounds(
    items: &[PromptItem],
    important: Option<&BTreeMap<String, Vec<String>>>,
    spec: &PromptSpec,
) -> Result<Vec<Vec<Prompt>>> {
    spec.validate(items.len())?;
    spec.seeds
        .iter()
        .map(|&s| build_fewshot_prompts(items, important, &spec.labels, spec.k_shots, s))
        .collect()
}

pub fn write_jsonl<W: Write, T: Serialize>(records: &[T], mut out: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn parse_prompts_jsonl(content: &str, file: &str) -> Result<Vec<Prompt>> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse(file, n + 1, "<json>", e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub id: String,
    pub completion: String,
}

/// Completion file: JSON lines `{"id": ..., "completion": ...}`.
pub fn parse_completions_jsonl(content: &str, file: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: Completion =
            serde_json::from_str(line).map_err(|e| Error::parse(file, n + 1, "<json>", e.to_string()))?;
        if out.insert(c.id.clone(), c.completion).is_some() {
            return Err(Error::parse(file, n + 1, "id", format!("duplicate prompt id `{}`", c.id)));
        }
    }
    Ok(out)
}

/// First whitespace-delimited token with surrounding punctuation removed;
/// `None` when nothing is left.
pub fn first_answer_token(completion: &str) -> Option<&str> {
    let tok = completion.split_whitespace().next()?;
    let tok = tok.trim_matches(|c: char| !c.is_alphanumeric());
    (!tok.is_empty()).then_some(tok)
}

/// Case-insensitive first-token match; `None` for an unparseable completion.
pub fn grade_completion(completion: &str, gold: &str) -> Option<bool> {
    first_answer_token(completion).map(|t| t.to_lowercase() == gold.to_lowercase())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundScore {
    pub correct: usize,
    pub total: usize,
    pub unparseable: usize,
    pub accuracy: f64,
}

pub fn score_round(prompts: &[Prompt], completions: &BTreeMap<String, String>) -> Result<RoundScore> {
    let gold: BTreeMap<&str, &str> = prompts.iter().map(|p| (p.id.as_str(), p.gold.as_str())).collect();
    if let Some(id) = completions.keys().find(|id| !gold.contains_key(id.as_str())) {
        return Err(Error::invalid(format!("completion for unknown prompt id `{id}`")));
    }
    let mut correct = 0;
    let mut unparseable = 0;
    for (id, label) in &gold {
        let c = completions
            .get(*id)
            .ok_or_else(|| Error::invalid(format!("no completion for prompt id `{id}`")))?;
        match grade_completion(c, label) {
            Some(true) => correct += 1,
            Some(false) => {}
            None => {
                log::warn!("prompt `{id}`: unparseable completion {c:?}; counted incorrect");
                unparseable += 1;
            }
        }
    }
    Ok(RoundScore {
        correct,
        total: gold.len(),
        unparseable,
        accuracy: correct as f64 / gold.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// 95% Student-t interval; absent for a single round.
    pub ci: Option<MeanCi>,
}

impl fmt::Display for AccuracyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.ci {
            Some(ci) => write!(f, "{ci}"),
            None => write!(f, "{:.2}", self.mean),
        }
    }
}

pub fn accuracy_report(accuracies: &[f64]) -> Result<AccuracyReport> {
    if accuracies.is_empty() {
        return Err(Error::invalid("no rounds to report"));
    }
    if let Some(a) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::invalid(format!("accuracy {a} outside [0, 1]")));
    }
    let ci = if accuracies.len() >= 2 {
        Some(mean_ci(accuracies, 0.95)?)
    } else {
        None
    };
    Ok(AccuracyReport {
        accuracies: accuracies.to_vec(),
        mean: mean(accuracies),
        ci,
    })
}

/// Grade each round's completions against its prompts and summarise.
pub fn score_fewshot_runs(rounds: &[(Vec<Prompt>, BTreeMap<String, String>)]) -> Result<AccuracyReport> {
    let acc = rounds
        .iter()
        .map(|(p, c)| score_round(p, c).map(|s| s.accuracy))
        .collect::<Result<Vec<_>>>()?;
    accuracy_report(&acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> [String; 2] {
        ["Polite".to_string(), "Impolite".to_string()]
    }

    fn items(n: usize) -> Vec<PromptItem> {
        (0..n)
            .map(|i| PromptItem {
                id: format!("i{i}"),
                text: format!("text number {i}"),
                label: labels()[i % 2].clone(),
            })
            .collect()
    }

    #[test]
    fn zero_shot_baseline_layout() {
        let p = build_fewshot_prompts(&items(1), None, &labels(), 0, 1).unwrap();
        assert_eq!(
            p[0].text,
            "Decide whether the following text is Polite or Impolite.\nText: text number 0\nPolite or Impolite:"
        );
        assert_eq!(p[0].id, "i0#1");
    }

    #[test]
    fn demonstrations_exclude_query_and_are_seeded() {
        let a = build_fewshot_prompts(&items(6), None, &labels(), 4, 9).unwrap();
        let b = build_fewshot_prompts(&items(6), None, &labels(), 4, 9).unwrap();
        assert_eq!(a, b);
        for p in &a {
            assert_eq!(p.demonstrations.len(), 4);
            assert!(!p.demonstrations.contains(&p.query_id));
            let uniq: BTreeSet<_> = p.demonstrations.iter().collect();
            assert_eq!(uniq.len(), 4);
            assert_eq!(p.text.matches("Text: ").count(), 5);
        }
        assert!(build_fewshot_prompts(&items(3), None, &labels(), 3, 0).is_err());
    }

    #[test]
    fn grading_rule() {
        assert_eq!(grade_completion(" polite.", "Polite"), Some(true));
        assert_eq!(grade_completion("\nImpolite because", "Polite"), Some(false));
        assert_eq!(grade_completion("  ", "Polite"), None);
        assert_eq!(grade_completion("...", "Polite"), None);
    }

    #[test]
    fn round_scoring_errors_on_unknown_or_missing_ids() {
        let prompts = build_fewshot_prompts(&items(2), None, &labels(), 0, 0).unwrap();
        let mut c: BTreeMap<String, String> = prompts.iter().map(|p| (p.id.clone(), p.gold.clone())).collect();
        let s = score_round(&prompts, &c).unwrap();
        assert_eq!((s.correct, s.total, s.accuracy), (2, 2, 1.0));
        c.insert("nope".into(), "Polite".into());
        assert!(score_round(&prompts, &c).is_err());
        c.remove("nope");
        c.remove(&prompts[0].id);
        assert!(score_round(&prompts, &c).is_err());
    }

    #[test]
    fn report_format() {
        assert_eq!(accuracy_report(&[0.90, 0.95, 0.90, 0.95, 0.90]).unwrap().to_string(), "0.92 (0.034)");
        let perfect = accuracy_report(&[1.0; 5]).unwrap();
        assert_eq!(perfect.ci.unwrap().half_width, 0.0);
        assert_eq!(accuracy_report(&[0.5]).unwrap().to_string(), "0.50");
        assert!(accuracy_report(&[1.2, 0.5]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let prompts = build_fewshot_prompts(&items(3), None, &labels(), 1, 5).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&prompts, &mut buf).unwrap();
        assert_eq!(parse_prompts_jsonl(std::str::from_utf8(&buf).unwrap(), "m").unwrap(), prompts);
        let c = parse_completions_jsonl("{\"id\":\"a\",\"completion\":\"Polite\"}\n", "m").unwrap();
        assert_eq!(c["a"], "Polite");
        assert!(parse_completions_jsonl("{\"id\":\"a\",\"completion\":\"x\"}\n{\"id\":\"a\",\"completion\":\"y\"}\n", "m").is_err());
    }
}
