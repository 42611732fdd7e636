//! Generators and brute-force oracles shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use gazesal::ingest::{Condition, FixationEvent, TrialRecord};
use gazesal::metrics::{IAMeasures, IaFixation, MeasureKey, MeasureRow, MeasureTable};
use gazesal::saliency::BinaryMap;
use gazesal::stats::LmmDesign;
use gazesal::stimulus::{segment_interest_areas, tokens_from_lines, Source, StopwordSet, Stimulus, Style, Token};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A stimulus of `n` content words, one IA each, with varied covariates.
pub fn stimulus_with_ias(id: &str, n: usize) -> Stimulus {
    let words: Vec<String> = (0..n).map(|i| format!("word{}{}", "x".repeat(i % 4), i)).collect();
    let line = words.join(" ");
    let mut tokens = tokens_from_lines(&[&line]);
    for (i, t) in tokens.iter_mut().enumerate() {
        t.pos_tag = ["NN", "VBD", "JJ", "RB", "NNS"][i % 5].to_string();
        t.log_freq = ((i * 7) % 5) as f64 * 0.5 + 1.0;
    }
    let ias = segment_interest_areas(&tokens, &StopwordSet::english()).unwrap();
    assert_eq!(ias.len(), n);
    Stimulus {
        stimulus_id: id.into(),
        style: Style::Polite,
        source: Source::Forum,
        text: line,
        tokens,
        ias,
    }
}

/// Random fixation list over `n_ia` IAs; roughly one in eight fixations
/// lands outside every IA.
pub fn random_fixations<R: Rng>(rng: &mut R, len: usize, n_ia: usize) -> Vec<FixationEvent> {
    let mut t = 0;
    (0..len)
        .map(|k| {
            let dur = rng.gen_range(40..600);
            let gap = rng.gen_range(0..40);
            let ia = if rng.gen_bool(0.125) { None } else { Some(rng.gen_range(0..n_ia)) };
            let f = FixationEvent {
                fixation_index: k,
                start_ms: t + gap,
                end_ms: t + gap + dur,
                x_px: 0.0,
                y_px: 0.0,
                pupil: rng.gen_range(600.0..1400.0),
                ia_index: ia,
            };
            t += gap + dur;
            f
        })
        .collect()
}

pub fn trial(participant: &str, trial_id: &str, stimulus_id: &str, fixations: Vec<FixationEvent>) -> TrialRecord {
    TrialRecord {
        participant_id: participant.into(),
        trial_id: trial_id.into(),
        stimulus_id: stimulus_id.into(),
        condition: Condition::Incongruent,
        block_style: Style::Impolite,
        fixations,
        track_loss_fraction: 0.0,
    }
}

/// Reading measures straight from the definitions, over the raw fixation
/// list (fixations outside every IA are skipped).
pub fn oracle_measures(fixations: &[FixationEvent], ia: usize) -> IAMeasures {
    let s: Vec<IaFixation> = fixations
        .iter()
        .filter_map(|f| {
            f.ia_index.map(|i| IaFixation {
                ia: i,
                duration_ms: f.end_ms - f.start_ms,
                pupil: f.pupil,
            })
        })
        .collect();
    let on: Vec<usize> = (0..s.len()).filter(|&k| s[k].ia == ia).collect();
    let fc = on.len() as u32;
    let reg_count = (0..s.len().saturating_sub(1))
        .filter(|&k| s[k].ia == ia && s[k + 1].ia < ia)
        .count() as u32;
    if on.is_empty() {
        return IAMeasures {
            fc,
            reg_count,
            ..IAMeasures::default()
        };
    }
    let first = on[0];
    let ffd = s[first].duration_ms;
    // first run: members of `on` that are consecutive positions from `first`
    let mut frd = 0;
    for (n, &k) in on.iter().enumerate() {
        if k != first + n {
            break;
        }
        frd += s[k].duration_ms;
    }
    let leftward_exits: Vec<usize> = on
        .iter()
        .copied()
        .filter(|&k| k + 1 < s.len() && s[k + 1].ia < ia)
        .collect();
    let gp = match leftward_exits.first() {
        Some(&exit) => on.iter().filter(|&&k| k <= exit).map(|&k| s[k].duration_ms).sum(),
        None => frd,
    };
    let dt: i64 = on.iter().map(|&k| s[k].duration_ms).sum();
    let mut pupil = 0.0;
    for &k in &on {
        pupil += s[k].pupil;
    }
    IAMeasures {
        ffd_ms: Some(ffd),
        frd_ms: Some(frd),
        gp_ms: Some(gp),
        dt_ms: Some(dt),
        rr_ms: Some(dt - frd),
        ps: Some(pupil / on.len() as f64),
        fc,
        reg_count,
    }
}

/// Exact equality, comparing pupil size by bit pattern.
pub fn measures_identical(a: &IAMeasures, b: &IAMeasures) -> bool {
    a.ffd_ms == b.ffd_ms
        && a.frd_ms == b.frd_ms
        && a.gp_ms == b.gp_ms
        && a.dt_ms == b.dt_ms
        && a.rr_ms == b.rr_ms
        && a.ps.map(f64::to_bits) == b.ps.map(f64::to_bits)
        && a.fc == b.fc
        && a.reg_count == b.reg_count
}

/// Identity and ordering invariants; returns a description of the first violation.
pub fn check_measure_invariants(m: &IAMeasures) -> Result<(), String> {
    match (m.ffd_ms, m.frd_ms, m.gp_ms, m.dt_ms, m.rr_ms) {
        (None, None, None, None, None) => {
            if m.fc != 0 || m.ps.is_some() {
                return Err(format!("unfixated IA with fc {} / ps {:?}", m.fc, m.ps));
            }
            Ok(())
        }
        (Some(ffd), Some(frd), Some(gp), Some(dt), Some(rr)) => {
            if frd + rr != dt {
                return Err(format!("frd {frd} + rr {rr} != dt {dt}"));
            }
            if !(ffd <= frd && frd <= gp && gp <= dt) {
                return Err(format!("ordering violated: ffd {ffd} frd {frd} gp {gp} dt {dt}"));
            }
            if m.fc < 1 {
                return Err("fixated IA with fc 0".into());
            }
            Ok(())
        }
        _ => Err(format!("partially defined measures {m:?}")),
    }
}

pub fn random_stopword_tokens<R: Rng>(rng: &mut R, n: usize) -> Vec<Token> {
    const CONTENT: [&str; 6] = ["cat", "review", "kind", "Polite", "movie", "suggestion"];
    const FUNCTION: [&str; 7] = ["the", "and", "of", "You", "for", ",", "."];
    let mut lines: Vec<Vec<&str>> = vec![Vec::new()];
    for _ in 0..n {
        if !lines.last().unwrap().is_empty() && rng.gen_bool(0.15) {
            lines.push(Vec::new());
        }
        let w = if rng.gen_bool(0.55) {
            FUNCTION[rng.gen_range(0..FUNCTION.len())]
        } else {
            CONTENT[rng.gen_range(0..CONTENT.len())]
        };
        lines.last_mut().unwrap().push(w);
    }
    let joined: Vec<String> = lines.iter().map(|l| l.join(" ")).collect();
    let refs: Vec<&str> = joined.iter().map(String::as_str).collect();
    tokens_from_lines(&refs)
}

/// Owner content token per token by exhaustive search: smallest index
/// distance on the same line, larger index on ties; `None` for tokens on a
/// line with no content token.
pub fn oracle_owners(tokens: &[Token], stopwords: &StopwordSet) -> Vec<Option<usize>> {
    (0..tokens.len())
        .map(|i| {
            if !stopwords.is_function_token(&tokens[i]) {
                return Some(i);
            }
            (0..tokens.len())
                .filter(|&j| tokens[j].line_index == tokens[i].line_index && !stopwords.is_function_token(&tokens[j]))
                .min_by_key(|&j| (j.abs_diff(i), std::cmp::Reverse(j)))
        })
        .collect()
}

/// Oracle partition as lists of token indices.
pub fn oracle_partition(tokens: &[Token], stopwords: &StopwordSet) -> Vec<Vec<usize>> {
    let owners = oracle_owners(tokens, stopwords);
    let key = |i: usize| owners[i].map_or((tokens[i].line_index, usize::MAX), |o| (tokens[i].line_index, o));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..tokens.len() {
        match groups.last_mut() {
            Some(g) if key(g[0]) == key(i) => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

fn row(participant: &str, stim: &str, cond: Condition, ia: usize, dt: Option<i64>, ps: Option<f64>) -> MeasureRow {
    MeasureRow {
        key: MeasureKey {
            participant_id: participant.into(),
            trial_id: format!("{participant}/{stim}"),
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
            ps,
            fc: u32::from(dt.is_some()),
            reg_count: 0,
        },
    }
}

/// Table of `participants × stimuli × ias`, each IA skipped with
/// probability `skip`. Conditions alternate by stimulus and participant.
pub fn random_table<R: Rng>(rng: &mut R, participants: usize, stimuli: usize, ias: usize, skip: f64) -> MeasureTable {
    let mut rows = Vec::new();
    for p in 0..participants {
        let speed = rng.gen_range(0.6..1.6);
        for s in 0..stimuli {
            let cond = if (p + s) % 2 == 0 { Condition::Congruent } else { Condition::Incongruent };
            for i in 0..ias {
                let observed = !rng.gen_bool(skip);
                let dt = observed.then(|| (speed * rng.gen_range(80.0..900.0)) as i64);
                let ps = observed.then(|| rng.gen_range(500.0..1500.0));
                rows.push(row(&format!("p{p:02}"), &format!("s{s:02}"), cond, i, dt, ps));
            }
        }
    }
    MeasureTable::from_rows(rows).unwrap()
}

/// Replace each participant's pupil values by `a_p · x + b_p`.
pub fn affine_pupil(table: &MeasureTable, coef: &BTreeMap<String, (f64, f64)>) -> MeasureTable {
    let mut t = table.clone();
    for r in &mut t.rows {
        let (a, b) = coef[&r.key.participant_id];
        r.measures.ps = r.measures.ps.map(|x| a * x + b);
    }
    t
}

/// `groups × per_group` rows of `y = 1 + beta_congruent · congruent + b_g + e`.
pub fn simulate_congruency<R: Rng>(
    rng: &mut R,
    groups: usize,
    per_group: usize,
    beta_congruent: f64,
    sigma_b: f64,
    sigma_e: f64,
) -> LmmDesign {
    let nb = Normal::new(0.0, sigma_b).unwrap();
    let ne = Normal::new(0.0, sigma_e).unwrap();
    let mut y = Vec::new();
    let mut cong = Vec::new();
    let mut g = Vec::new();
    for k in 0..groups {
        let b = nb.sample(rng);
        for r in 0..per_group {
            let c = (r % 2) as f64;
            y.push(1.0 + beta_congruent * c + b + ne.sample(rng));
            cong.push(c);
            g.push(format!("g{k:02}"));
        }
    }
    let n = y.len();
    LmmDesign::new(y, vec!["intercept".into(), "congruent".into()], vec![vec![1.0; n], cong], g).unwrap()
}

pub fn random_set<R: Rng>(rng: &mut R, universe: usize, size: usize) -> BTreeSet<(String, usize)> {
    rand::seq::index::sample(rng, universe, size)
        .into_iter()
        .map(|i| (format!("s{}", i / 10), i % 10))
        .collect()
}

pub fn binary(source: &str, salient: BTreeSet<(String, usize)>) -> BinaryMap {
    BinaryMap {
        source: source.into(),
        universe: salient.clone(),
        salient,
        threshold_value: 0.0,
    }
}

pub fn population_mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Hand-segmented sentences: display lines and the expected IAs in bracket
/// notation. Ties, line breaks, punctuation and all-stopword lines included.
pub const HAND_SEGMENTATIONS: [(&[&str], &str); 20] = [
    (&["Thank you for your kind comment"], "[Thank you][for your kind][comment]"),
    (&["cats dogs birds"], "[cats][dogs][birds]"),
    (&["the cat sat on the mat"], "[the cat][sat on][the mat]"),
    (&["red and blue"], "[red][and blue]"),
    (&["walked to the store"], "[walked to][the store]"),
    (&["great idea and", "more to come"], "[great][idea and][more to come]"),
    (&["I will", "help you"], "[I will][help you]"),
    (&["Nice work ."], "[Nice][work .]"),
    (
        &["Do you have a suggestion where the portals should be placed?"],
        "[Do you have a suggestion where][the portals should][be placed?]",
    ),
    (&["it is what it is"], "[it is what it is]"),
    (&["apples or pears and plums"], "[apples][or pears][and plums]"),
    (&["The Movie was GREAT"], "[The Movie][was GREAT]"),
    (&["but if only there were answers"], "[but if only there were answers]"),
    (&["answers were there"], "[answers were there]"),
    (&["please", "the", "stop now"], "[please][the][stop now]"),
    (&["well , okay"], "[well][, okay]"),
    (&["thanks !", "sure"], "[thanks !][sure]"),
    (&["don't do that again"], "[don't do that again]"),
    (&["your review was helpful and kind"], "[your review][was helpful][and kind]"),
    (&["I really love this film", "so much"], "[I really][love][this film][so much]"),
];

pub fn bracketed(ias: &[gazesal::stimulus::InterestArea]) -> String {
    ias.iter().map(|ia| format!("[{}]", ia.text)).collect()
}
