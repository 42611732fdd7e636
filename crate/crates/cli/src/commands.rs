use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gazesal::compare::{
    align_all, build_comparison_report, parse_annotation_file, parse_token_score_file, write_matrix_csv, OptionCell,
};
use gazesal::ingest::{
    assign_fixations_to_ias, filter_trials_by_track_loss, parse_fixation_report, parse_layouts,
    remove_outlier_fixations, write_fixation_report, TrialRecord,
};
use gazesal::metrics::{compute_measure_table, read_measure_table, write_measure_table, Measure, MeasureTable};
use gazesal::report::prompts::{important_words_by_item, parse_completions_jsonl, parse_prompts_jsonl, write_jsonl};
use gazesal::report::{accuracy_report, build_rounds, render_heatmap_document, score_round, PromptItem, PromptSpec};
use gazesal::saliency::{
    binarize_median, congruency_contrast, lme_adjusted_aggregate, raw_aggregate, read_saliency_maps,
    write_binary_map, write_saliency_map, zscore_aggregate, ConditionFilter, Covariates, SaliencyMap, SdVariant,
};
use gazesal::stats::{compute_vif, fit_random_intercept_lmm, format_fit_table, pearson_r, LmmConfig, LmmDesign};
use gazesal::stimulus::{
    load_stimuli, parse_stimuli, segment_interest_areas, stimulus_to_json_line, StopwordSet, Stimulus,
};
use gazesal::{Error, Result};
use serde_json::json;

use crate::settings::{parse_flag, parse_sd_multiplier, Settings};
use crate::{
    CompareArgs, IngestArgs, LmmArgs, MetricsArgs, PromptsArgs, ReportArgs, SaliencyArgs, ScoreArgs, SegmentArgs,
};

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

/// Output files staged in memory and written only once every input has
/// been validated and every result computed.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        if dir.exists() && !dir.is_dir() {
            return Err(invalid(format!("--out-dir {} is not a directory", dir.display())));
        }
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn add_with(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    fn add_json(&mut self, name: impl Into<String>, value: &impl serde::Serialize) {
        let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
        s.push('\n');
        self.add(name, s.into_bytes());
    }

    fn commit(self) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::Io {
            path: self.dir.clone(),
            source: e,
        })?;
        for (name, bytes) in self.files {
            let path = self.dir.join(&name);
            fs::write(&path, bytes).map_err(|e| Error::Io { path, source: e })?;
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn stimulus_index(stimuli: &[Stimulus]) -> BTreeMap<&str, &Stimulus> {
    stimuli.iter().map(|s| (s.stimulus_id.as_str(), s)).collect()
}

/// Parse a fixation report, checking stimulus references and assigning IAs
/// from `layout` when the report carries none.
fn load_trials(stimuli: &[Stimulus], fixations: &Path, layout: Option<&Path>) -> Result<Vec<TrialRecord>> {
    let report = parse_fixation_report(fixations)?;
    let by_id = stimulus_index(stimuli);
    for t in &report.trials {
        if !by_id.contains_key(t.stimulus_id.as_str()) {
            return Err(invalid(format!(
                "trial ({}, {}) references unknown stimulus `{}`",
                t.participant_id, t.trial_id, t.stimulus_id
            )));
        }
    }
    match (report.has_ia_index, layout) {
        (_, Some(path)) => {
            let layouts = parse_layouts(path)?;
            for (id, layout) in &layouts {
                let stim = by_id
                    .get(id.as_str())
                    .ok_or_else(|| invalid(format!("layout references unknown stimulus `{id}`")))?;
                layout.validate_for(stim)?;
            }
            report
                .trials
                .iter()
                .map(|t| {
                    let layout = layouts
                        .get(&t.stimulus_id)
                        .ok_or_else(|| invalid(format!("no layout for stimulus `{}`", t.stimulus_id)))?;
                    assign_fixations_to_ias(t, layout)
                })
                .collect()
        }
        (true, None) => Ok(report.trials),
        (false, None) => Err(invalid("fixation report has no ia_index column; pass --layout")),
    }
}

pub fn segment(args: &SegmentArgs) -> Result<()> {
    let stopwords = match &args.stopwords {
        Some(path) => StopwordSet::from_words(read(path)?.lines().map(str::trim).filter(|l| !l.is_empty())),
        None => StopwordSet::english(),
    };
    let file = args.stimuli.display().to_string();
    let mut stimuli = parse_stimuli(&read(&args.stimuli)?, &file, &stopwords)?;
    let mut listing = String::from("stimulus_id\tia_index\ttoken_indices\ttext\n");
    for s in &mut stimuli {
        s.ias = segment_interest_areas(&s.tokens, &stopwords)?;
        for ia in &s.ias {
            let idx: Vec<String> = ia.token_indices.iter().map(ToString::to_string).collect();
            listing.push_str(&format!("{}\t{}\t{}\t{}\n", s.stimulus_id, ia.ia_index, idx.join(" "), ia.text));
        }
    }
    let mut jsonl = String::new();
    for s in &stimuli {
        jsonl.push_str(&stimulus_to_json_line(s));
        jsonl.push('\n');
    }
    let mut out = Outputs::new(&args.out_dir)?;
    out.add("stimuli.jsonl", jsonl.into_bytes());
    out.add("interest_areas.tsv", listing.into_bytes());
    out.commit()
}

pub fn ingest(args: &IngestArgs, settings: &Settings) -> Result<()> {
    let threshold = args.threshold_trackloss.unwrap_or(settings.threshold_trackloss);
    let mut policy = settings.outliers;
    if let Some(ms) = args.min_fixation_ms {
        policy.min_duration_ms = ms;
    }
    if let Some(raw) = &args.sd_multiplier {
        policy.sd_multiplier = parse_sd_multiplier(raw)?;
    }
    let stimuli = load_stimuli(&args.stimuli)?;
    let trials = load_trials(&stimuli, &args.fixations, args.layout.as_deref())?;
    let (trials, track_loss) = filter_trials_by_track_loss(trials, threshold)?;
    let (trials, outliers) = remove_outlier_fixations(trials, &policy);

    let mut out = Outputs::new(&args.out_dir)?;
    out.add_with("fixations.clean.csv", |buf| write_fixation_report(&trials, buf))?;
    out.add_json("cleaning.json", &json!({ "track_loss": track_loss, "outliers": outliers }));
    out.commit()
}

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    let stimuli = load_stimuli(&args.stimuli)?;
    let trials = load_trials(&stimuli, &args.fixations, args.layout.as_deref())?;
    let table = compute_measure_table(&trials, &stimuli)?;
    let (fc, dt): (Vec<f64>, Vec<f64>) = table
        .rows
        .iter()
        .filter_map(|r| r.measures.dt_ms.map(|d| (r.measures.fc as f64, d as f64)))
        .unzip();
    let fc_dt = pearson_r(&fc, &dt)?;
    let with_regressions = table.rows.iter().filter(|r| r.measures.reg_count > 0).count();
    let summary = json!({
        "rows": table.len(),
        "fixated_rows": fc.len(),
        "pearson_fc_dt": fc_dt,
        "nonzero_regression_fraction": if table.is_empty() { 0.0 } else { with_regressions as f64 / table.len() as f64 },
    });
    let mut out = Outputs::new(&args.out_dir)?;
    out.add_with("measures.csv", |buf| write_measure_table(&table, buf))?;
    out.add_json("measures_summary.json", &summary);
    out.commit()
}

fn check_table_against(table: &MeasureTable, stimuli: &[Stimulus]) -> Result<()> {
    let by_id = stimulus_index(stimuli);
    for r in &table.rows {
        match by_id.get(r.key.stimulus_id.as_str()) {
            None => return Err(invalid(format!("measure table references unknown stimulus `{}`", r.key.stimulus_id))),
            Some(s) if r.key.ia_index >= s.ias.len() => {
                return Err(invalid(format!(
                    "measure table references IA {} of `{}`, which has {} IAs",
                    r.key.ia_index,
                    s.stimulus_id,
                    s.ias.len()
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

pub fn saliency(args: &SaliencyArgs, settings: &Settings) -> Result<()> {
    let measure: Measure = match &args.measure {
        Some(m) => parse_flag("measure", m)?,
        None => settings.measure,
    };
    let agg = args.agg.clone().unwrap_or_else(|| settings.agg.clone());
    let condition = args.condition.clone().unwrap_or_else(|| settings.condition.clone());
    let sd: SdVariant = match &args.sd {
        Some(s) => parse_flag("sd", s)?,
        None => settings.sd_variant,
    };
    if !["zscore", "raw", "lme"].contains(&agg.as_str()) {
        return Err(invalid(format!("--agg: unknown aggregation `{agg}` (expected zscore|raw|lme)")));
    }
    let contrast = condition == "contrast";
    let filter: ConditionFilter = if contrast { ConditionFilter::All } else { parse_flag("condition", &condition)? };

    let stimuli = load_stimuli(&args.stimuli)?;
    let table = read_measure_table(&args.measures)?;
    check_table_against(&table, &stimuli)?;
    let covariates = if agg == "lme" { Some(Covariates::standard(&table, &stimuli)?) } else { None };
    let aggregate = |f: ConditionFilter| -> Result<SaliencyMap> {
        match (agg.as_str(), &covariates) {
            ("zscore", _) => zscore_aggregate(&table, measure, f, sd),
            ("raw", _) => raw_aggregate(&table, measure, f),
            (_, Some(c)) => lme_adjusted_aggregate(&table, measure, f, c, &LmmConfig::default()),
            _ => unreachable!("aggregation validated above"),
        }
    };
    let map = if contrast {
        congruency_contrast(&aggregate(ConditionFilter::Incongruent)?, &aggregate(ConditionFilter::Congruent)?)?
    } else {
        aggregate(filter)?
    };
    let binary = binarize_median(&map)?;

    let mut out = Outputs::new(&args.out_dir)?;
    out.add_with("saliency.csv", |buf| write_saliency_map(&map, buf))?;
    out.add_with("saliency.binary.csv", |buf| write_binary_map(&binary, buf))?;
    out.add_json(
        "saliency.json",
        &json!({
            "source": map.source,
            "measure": measure,
            "agg": agg,
            "condition": condition,
            "sd_variant": sd,
            "n_participants": map.n_participants,
            "n_ias": map.len(),
            "threshold": binary.threshold_value,
            "n_salient": binary.salient.len(),
            "warnings": map.warnings,
        }),
    );
    out.commit()
}

fn select_map(maps: Vec<SaliencyMap>, source: Option<&str>, file: &Path) -> Result<SaliencyMap> {
    match source {
        Some(label) => maps
            .into_iter()
            .find(|m| m.source == label)
            .ok_or_else(|| invalid(format!("{}: no map with source `{label}`", file.display()))),
        None if maps.len() == 1 => Ok(maps.into_iter().next().unwrap()),
        None => {
            let labels: Vec<&str> = maps.iter().map(|m| m.source.as_str()).collect();
            Err(invalid(format!(
                "{} holds {} maps ({}); choose one with --source",
                file.display(),
                maps.len(),
                labels.join(", ")
            )))
        }
    }
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let stimuli = load_stimuli(&args.stimuli)?;
    let mut maps = Vec::new();
    for path in &args.maps {
        maps.extend(read_saliency_maps(path)?);
    }
    let mut aligned = Vec::new();
    for path in &args.token_scores {
        for set in parse_token_score_file(path)? {
            aligned.push(align_all(&set, &stimuli)?);
        }
    }
    if let Some(path) = &args.annotations {
        aligned.push(align_all(&parse_annotation_file(path)?, &stimuli)?);
    }
    maps.extend(aligned.iter().cloned());

    let venn = match args.venn.as_slice() {
        [] => None,
        [a, b, c] => {
            let find = |label: &String| {
                maps.iter()
                    .position(|m| &m.source == label)
                    .ok_or_else(|| invalid(format!("--venn: no map with source `{label}`")))
            };
            Some([find(a)?, find(b)?, find(c)?])
        }
        other => return Err(invalid(format!("--venn takes exactly three sources, got {}", other.len()))),
    };
    let report = build_comparison_report(&maps, &stimuli, venn)?;
    let pearson: Vec<Vec<OptionCell>> = report
        .pearson
        .values
        .iter()
        .map(|row| row.iter().map(|v| OptionCell(*v)).collect())
        .collect();

    let mut out = Outputs::new(&args.out_dir)?;
    out.add_json("comparison.json", &report);
    out.add_with("jaccard.csv", |buf| write_matrix_csv(&report.sources, &report.jaccard, buf))?;
    out.add_with("pearson.csv", |buf| write_matrix_csv(&report.sources, &pearson, buf))?;
    for map in &aligned {
        out.add_with(format!("aligned_{}.csv", map.source), |buf| write_saliency_map(map, buf))?;
    }
    out.commit()
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let stimuli = load_stimuli(&args.stimuli)?;
    let map = select_map(read_saliency_maps(&args.maps)?, args.source.as_deref(), &args.maps)?;
    let reference = match &args.reference {
        Some(path) => {
            let m = select_map(read_saliency_maps(path)?, args.reference_source.as_deref(), path)?;
            Some(binarize_median(&m)?)
        }
        None => None,
    };
    let shown: Vec<Stimulus> = stimuli
        .into_iter()
        .filter(|s| map.scores.keys().any(|(id, _)| id == &s.stimulus_id))
        .collect();
    if shown.is_empty() {
        return Err(invalid(format!("map `{}` scores none of the stimuli", map.source)));
    }
    let known = stimulus_index(&shown);
    if let Some((id, _)) = map.scores.keys().find(|(id, _)| !known.contains_key(id.as_str())) {
        return Err(invalid(format!("map `{}` references unknown stimulus `{id}`", map.source)));
    }
    let html = render_heatmap_document(&shown, &map, reference.as_ref());
    let mut out = Outputs::new(&args.out_dir)?;
    out.add("heatmap.html", html.into_bytes());
    out.commit()
}

pub fn prompts(args: &PromptsArgs, settings: &Settings) -> Result<()> {
    let labels: [String; 2] = match args.labels.as_slice() {
        [] => ["Polite".into(), "Impolite".into()],
        [a, b] => [a.clone(), b.clone()],
        other => return Err(invalid(format!("--labels takes exactly two labels, got {}", other.len()))),
    };
    let seeds = if args.seeds.is_empty() {
        let base = args.seed.unwrap_or(settings.seed);
        let rounds = args.rounds.unwrap_or(settings.rounds) as u64;
        (base..base + rounds).collect()
    } else {
        args.seeds.clone()
    };
    let stimuli: Vec<Stimulus> = load_stimuli(&args.stimuli)?
        .into_iter()
        .filter(|s| labels.iter().any(|l| l == s.style.label()))
        .collect();
    let items: Vec<PromptItem> = stimuli.iter().map(PromptItem::from_stimulus).collect();
    let (important, source) = match &args.maps {
        Some(path) => {
            let map = select_map(read_saliency_maps(path)?, args.source.as_deref(), path)?;
            let binary = binarize_median(&map)?;
            (Some(important_words_by_item(&stimuli, &binary)), Some(map.source))
        }
        None => (None, None),
    };
    let spec = PromptSpec {
        labels,
        k_shots: args.k.unwrap_or(settings.k_shots),
        source,
        seeds,
    };
    let rounds = build_rounds(&items, important.as_ref(), &spec)?;

    let mut out = Outputs::new(&args.out_dir)?;
    for (i, prompts) in rounds.iter().enumerate() {
        out.add_with(format!("prompts_round{}.jsonl", i + 1), |buf| write_jsonl(prompts, buf))?;
    }
    out.add_json("prompt_spec.json", &spec);
    out.commit()
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    if args.prompts.len() != args.completions.len() {
        return Err(invalid(format!(
            "{} prompt files but {} completion files",
            args.prompts.len(),
            args.completions.len()
        )));
    }
    let mut rounds = Vec::new();
    for (p, c) in args.prompts.iter().zip(&args.completions) {
        let prompts = parse_prompts_jsonl(&read(p)?, &p.display().to_string())?;
        let completions = parse_completions_jsonl(&read(c)?, &c.display().to_string())?;
        rounds.push(score_round(&prompts, &completions)?);
    }
    let accuracies: Vec<f64> = rounds.iter().map(|r| r.accuracy).collect();
    let report = accuracy_report(&accuracies)?;
    println!("{report}");
    let mut out = Outputs::new(&args.out_dir)?;
    out.add_json("accuracy.json", &json!({ "rounds": rounds, "report": report, "display": report.to_string() }));
    out.commit()
}

pub fn lmm(args: &LmmArgs, settings: &Settings) -> Result<()> {
    let measure: Measure = match &args.measure {
        Some(m) => parse_flag("measure", m)?,
        None => settings.measure,
    };
    let stimuli = load_stimuli(&args.stimuli)?;
    let table = read_measure_table(&args.measures)?;
    check_table_against(&table, &stimuli)?;
    let covariates = Covariates::standard(&table, &stimuli)?;

    let keep: Vec<usize> = (0..table.len())
        .filter(|&i| {
            let r = &table.rows[i];
            r.key.condition != gazesal::ingest::Condition::ContextFree && measure.value(&r.measures).is_some()
        })
        .collect();
    if keep.is_empty() {
        return Err(invalid(format!("no congruent/incongruent rows with a {measure} value")));
    }
    let response: Vec<f64> = keep.iter().map(|&i| measure.value(&table.rows[i].measures).unwrap()).collect();
    let congruent: Vec<f64> = keep
        .iter()
        .map(|&i| f64::from(table.rows[i].key.condition == gazesal::ingest::Condition::Congruent))
        .collect();
    let mut names = vec!["intercept".to_string(), "congruent".to_string()];
    let mut columns = vec![vec![1.0; keep.len()], congruent];
    for (name, col) in covariates.names.iter().zip(&covariates.columns) {
        let sub: Vec<f64> = keep.iter().map(|&i| col[i]).collect();
        if sub.iter().all(|v| *v == sub[0]) {
            log::warn!("covariate `{name}` is constant over the fitted rows; dropped");
            continue;
        }
        names.push(name.clone());
        columns.push(sub);
    }
    let groups = keep.iter().map(|&i| table.rows[i].key.participant_id.clone()).collect();
    let mut design = LmmDesign::new(response, names, columns, groups)?;
    if args.normalize {
        design = design.normalized().0;
    }
    let fit = fit_random_intercept_lmm(&design, &LmmConfig::default())?;
    let vif = if design.columns.len() >= 3 {
        Some(compute_vif(&design.columns[1..], &design.names[1..])?)
    } else {
        None
    };
    let table_text = format_fit_table(&fit, vif.as_deref());

    let mut out = Outputs::new(&args.out_dir)?;
    out.add("lmm.tsv", table_text.into_bytes());
    out.add_json("lmm.json", &json!({ "measure": measure, "normalized": args.normalize, "fit": fit, "vif": vif }));
    out.commit()
}
