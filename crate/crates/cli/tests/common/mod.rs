#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gazesal::stimulus::{segment_interest_areas, tokens_from_lines, StopwordSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub const STIMULI: [(&str, &str, &[&str]); 4] = [
    ("forum-01", "polite", &["Thank you for the careful review", "I will fix the typo today"]),
    ("forum-02", "impolite", &["Nobody asked for your opinion here", "stop posting this nonsense"]),
    ("forum-03", "polite", &["Could you please share the source", "it would help us a lot"]),
    ("forum-04", "impolite", &["This is the worst answer ever", "read the manual first"]),
];

const POS: [&str; 6] = ["NN", "VBD", "JJ", "RB", "NNS", "VB"];

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gazesal")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env("RUST_LOG", "error").output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Raw stimulus records without IAs; `content_only` marks every token as
/// content and sets log-frequency equal to its length.
pub fn stimuli_jsonl(content_only: bool) -> String {
    let mut out = String::new();
    for (id, style, lines) in STIMULI {
        let tokens = tokens_from_lines(lines);
        let toks: Vec<_> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut v = json!({
                    "text": t.text,
                    "char_start": t.char_start,
                    "char_end": t.char_end,
                    "line_index": t.line_index,
                    "pos_tag": POS[i % POS.len()],
                    "log_freq": if content_only { t.char_len() as f64 } else { 1.0 + (i % 5) as f64 * 0.7 },
                });
                if content_only {
                    v["is_stopword"] = json!(false);
                }
                v
            })
            .collect();
        let rec = json!({"stimulus_id": id, "style": style, "source": "forum", "text": lines.join("\n"), "tokens": toks});
        writeln!(out, "{rec}").unwrap();
    }
    out
}

pub type Rect = (f64, f64, f64, f64);

/// IA rectangles: IAs on line `l` stacked left to right, 100 px wide, 40 px tall.
pub fn ia_boxes() -> Vec<(String, Vec<Rect>)> {
    STIMULI
        .iter()
        .map(|(id, _, lines)| {
            let tokens = tokens_from_lines(lines);
            let ias = segment_interest_areas(&tokens, &StopwordSet::english()).unwrap();
            let mut col = vec![0usize; lines.len()];
            let boxes = ias
                .iter()
                .map(|ia| {
                    let line = tokens[ia.token_indices[0]].line_index;
                    let x = col[line] as f64 * 100.0;
                    col[line] += 1;
                    let y = line as f64 * 40.0;
                    (x, y, x + 100.0, y + 40.0)
                })
                .collect();
            (id.to_string(), boxes)
        })
        .collect()
}

pub fn layout_csv() -> String {
    let mut out = String::from("stimulus_id,ia_index,left,top,right,bottom\n");
    for (id, boxes) in ia_boxes() {
        for (i, (l, t, r, b)) in boxes.iter().enumerate() {
            writeln!(out, "{id},{i},{l},{t},{r},{b}").unwrap();
        }
    }
    out
}

/// Six participants read every stimulus left to right with occasional
/// regressions; conditions alternate; one trial has heavy track loss.
pub fn fixations_csv() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = String::from(
        "participant_id,trial_id,stimulus_id,condition,block_style,fixation_index,start_ms,end_ms,x_px,y_px,pupil,track_loss_fraction\n",
    );
    let boxes = ia_boxes();
    for part in 0..6 {
        let speed = 1.0 + part as f64 * 0.15;
        let pupil_base = 800.0 + part as f64 * 120.0;
        for (s, (id, rects)) in boxes.iter().enumerate() {
            let cond = if (part + s) % 2 == 0 { "congruent" } else { "incongruent" };
            let style = STIMULI[s].1;
            let loss = if part == 2 && s == 3 { 0.8 } else { rng.gen_range(0.0..0.2) };
            let mut order: Vec<usize> = (0..rects.len()).collect();
            if rng.gen_bool(0.6) {
                let back = rng.gen_range(0..rects.len());
                order.insert(rng.gen_range(back..rects.len()) + 1, back);
            }
            let mut t = 0i64;
            let mut k = 0;
            for ia in order {
                let (l, top, r, b) = rects[ia];
                let dur = ((rng.gen_range(120.0..320.0) + 12.0 * ia as f64) * speed) as i64;
                let x = (l + r) / 2.0 + rng.gen_range(-20.0..20.0);
                let y = (top + b) / 2.0 + rng.gen_range(-10.0..10.0);
                let pupil = pupil_base + rng.gen_range(-40.0..40.0);
                writeln!(out, "p{part},t{s},{id},{cond},{style},{k},{t},{},{x:.1},{y:.1},{pupil:.1},{loss:.3}", t + dur).unwrap();
                t += dur + 25;
                k += 1;
            }
            writeln!(out, "p{part},t{s},{id},{cond},{style},{k},{t},{},950.0,10.0,{pupil_base},{loss:.3}", t + 60).unwrap();
        }
    }
    out
}

pub fn token_scores_tsv() -> String {
    let mut out = String::from("# units: nats / attribution\n# model: synthetic\nsource,stimulus_id,token_index,score\n");
    for (id, _, lines) in STIMULI {
        let n = tokens_from_lines(lines).len();
        for t in 0..n {
            writeln!(out, "surprisal,{id},{t},{}", 1.0 + ((t * 37) % 11) as f64 / 2.0).unwrap();
            writeln!(out, "ig,{id},{t},{}", ((t * 13) % 7) as f64 / 10.0 - 0.2).unwrap();
        }
    }
    out
}

pub fn annotations_csv() -> String {
    let mut out = String::from("stimulus_id,token_index,annotator_id,highlighted\n");
    for (id, _, lines) in STIMULI {
        let n = tokens_from_lines(lines).len();
        for t in 0..n {
            for a in 0..3 {
                writeln!(out, "{id},{t},a{a},{}", u8::from((t + a) % 4 == 0)).unwrap();
            }
        }
    }
    out
}

pub struct Study {
    pub dir: tempfile::TempDir,
}

impl Study {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let files = [
            ("stimuli.raw.jsonl", stimuli_jsonl(false)),
            ("collinear.jsonl", stimuli_jsonl(true)),
            ("layout.csv", layout_csv()),
            ("fixations.csv", fixations_csv()),
            ("tokens.csv", token_scores_tsv()),
            ("annotations.csv", annotations_csv()),
        ];
        for (name, body) in files {
            fs::write(dir.path().join(name), body).unwrap();
        }
        Study { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Every file under `dir`, relative path → bytes, sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
