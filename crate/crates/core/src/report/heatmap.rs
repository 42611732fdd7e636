use std::fmt::Write;

use crate::saliency::{BinaryMap, SaliencyMap};
use crate::stimulus::Stimulus;

const STYLE: &str = "body{font-family:Georgia,serif;max-width:52em;margin:2em auto;line-height:2}\
.stimulus{margin-bottom:2em}.line{white-space:nowrap}\
.ia{padding:0.1em 0.15em;border-radius:0.2em}\
.ia.missing{outline:1px dashed #999}\
.reference .ia.salient{background:rgba(37,99,235,0.35)}\
.label{font:0.75em sans-serif;color:#555}";

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Background opacity per IA: min-max scaled score within the stimulus,
/// 0.5 for every scored IA when all scores are equal, `None` when unscored.
pub fn ia_opacities(stimulus: &Stimulus, map: &SaliencyMap) -> Vec<Option<f64>> {
    let scores: Vec<Option<f64>> = stimulus
        .ias
        .iter()
        .map(|ia| map.get(&stimulus.stimulus_id, ia.ia_index))
        .collect();
    let present: Vec<f64> = scores.iter().flatten().copied().collect();
    let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores
        .into_iter()
        .map(|s| s.map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }))
        .collect()
}

fn ia_lines(stimulus: &Stimulus) -> Vec<Vec<usize>> {
    let mut lines: Vec<Vec<usize>> = Vec::new();
    let mut current = None;
    for ia in &stimulus.ias {
        let line = stimulus.tokens[ia.token_indices[0]].line_index;
        if current != Some(line) {
            lines.push(Vec::new());
            current = Some(line);
        }
        lines.last_mut().expect("line pushed").push(ia.ia_index);
    }
    lines
}

/// One `<section>` for a stimulus: a shaded row of IAs and, when
/// `reference` is given, a second row marking its salient IAs.
pub fn render_stimulus_section(stimulus: &Stimulus, map: &SaliencyMap, reference: Option<&BinaryMap>) -> String {
    let opacity = ia_opacities(stimulus, map);
    let id = &stimulus.stimulus_id;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<section class=\"stimulus\" id=\"{}\">\n<div class=\"label\">{} ({})</div>",
        escape_html(id),
        escape_html(id),
        stimulus.style
    );
    let _ = writeln!(out, "<div class=\"heat\" data-source=\"{}\">", escape_html(&map.source));
    for line in ia_lines(stimulus) {
        out.push_str("<div class=\"line\">");
        for (n, &i) in line.iter().enumerate() {
            if n > 0 {
                out.push(' ');
            }
            let text = escape_html(&stimulus.ias[i].text);
            match (opacity[i], map.get(id, i)) {
                (Some(a), Some(score)) => {
                    let _ = write!(
                        out,
                        "<span class=\"ia\" style=\"background:rgba(220,38,38,{a:.3})\" title=\"IA {i}: {score:.4}\">{text}</span>"
                    );
                }
                _ => {
                    let _ = write!(out, "<span class=\"ia missing\" title=\"IA {i}: no score\">{text}</span>");
                }
            }
        }
        out.push_str("</div>\n");
    }
    out.push_str("</div>\n");
    if let Some(r) = reference {
        let _ = writeln!(out, "<div class=\"reference\" data-source=\"{}\">", escape_html(&r.source));
        for line in ia_lines(stimulus) {
            out.push_str("<div class=\"line\">");
            for (n, &i) in line.iter().enumerate() {
                if n > 0 {
                    out.push(' ');
                }
                let class = if r.is_salient(id, i) { "ia salient" } else { "ia" };
                let _ = write!(out, "<span class=\"{class}\">{}</span>", escape_html(&stimulus.ias[i].text));
            }
            out.push_str("</div>\n");
        }
        out.push_str("</div>\n");
    }
    out.push_str("</section>\n");
    out
}

/// Standalone HTML document for a single stimulus.
pub fn render_heatmap_html(stimulus: &Stimulus, map: &SaliencyMap, reference: Option<&BinaryMap>) -> String {
    render_heatmap_document(std::slice::from_ref(stimulus), map, reference)
}

/// Standalone HTML document with one section per stimulus, in input order.
pub fn render_heatmap_document(stimuli: &[Stimulus], map: &SaliencyMap, reference: Option<&BinaryMap>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>Saliency: {}</title>\n<style>{STYLE}</style>\n</head>\n<body>\n<h1>{}</h1>",
        escape_html(&map.source),
        escape_html(&map.source)
    );
    if let Some(r) = reference {
        let _ = writeln!(
            out,
            "<p class=\"label\">Second row: salient IAs of {}</p>",
            escape_html(&r.source)
        );
    }
    for s in stimuli {
        out.push_str(&render_stimulus_section(s, map, reference));
    }
    out.push_str("</body>\n</html>\n");
    out
}
