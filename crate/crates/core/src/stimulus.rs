//! Stimulus texts, tokens and interest-area segmentation.
//!
//! An interest area (IA) is a contiguous run of tokens on a single display
//! line built around exactly one content word. Each stopword joins the nearest
//! content word on its own line (token-index distance, ties go right).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Polite,
    Impolite,
    Positive,
    Negative,
}

impl Style {
    pub const ALL: [Style; 4] = [Style::Polite, Style::Impolite, Style::Positive, Style::Negative];

    pub fn as_str(self) -> &'static str {
        match self {
            Style::Polite => "polite",
            Style::Impolite => "impolite",
            Style::Positive => "positive",
            Style::Negative => "negative",
        }
    }

    /// Capitalised form used in prompts ("Polite", "Negative").
    pub fn label(self) -> &'static str {
        match self {
            Style::Polite => "Polite",
            Style::Impolite => "Impolite",
            Style::Positive => "Positive",
            Style::Negative => "Negative",
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Style {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "polite" => Ok(Style::Polite),
            "impolite" => Ok(Style::Impolite),
            "positive" => Ok(Style::Positive),
            "negative" => Ok(Style::Negative),
            other => Err(format!("unknown style `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Twitter,
    Imdb,
    Forum,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Twitter => "twitter",
            Source::Imdb => "imdb",
            Source::Forum => "forum",
        }
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "twitter" => Ok(Source::Twitter),
            "imdb" => Ok(Source::Imdb),
            "forum" => Ok(Source::Forum),
            other => Err(format!("unknown source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Character (not byte) offsets into the stimulus text, half-open.
    pub char_start: usize,
    pub char_end: usize,
    pub line_index: usize,
    pub pos_tag: String,
    pub is_stopword: bool,
    pub log_freq: f64,
}

impl Token {
    /// Convenience constructor for tests and synthetic data.
    pub fn new(text: &str, char_start: usize, line_index: usize) -> Self {
        Token {
            text: text.to_string(),
            char_start,
            char_end: char_start + text.chars().count(),
            line_index,
            pos_tag: String::new(),
            is_stopword: false,
            log_freq: 0.0,
        }
    }

    pub fn char_len(&self) -> usize {
        self.char_end - self.char_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterestArea {
    pub ia_index: usize,
    pub token_indices: Vec<usize>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub stimulus_id: String,
    pub style: Style,
    pub source: Source,
    pub text: String,
    pub tokens: Vec<Token>,
    pub ias: Vec<InterestArea>,
}

impl Stimulus {
    pub fn ia_tokens(&self, ia_index: usize) -> impl Iterator<Item = &Token> {
        self.ias[ia_index]
            .token_indices
            .iter()
            .map(move |&t| &self.tokens[t])
    }

    /// Letters in the IA: summed token lengths, inter-token spaces excluded.
    pub fn ia_length(&self, ia_index: usize) -> usize {
        self.ia_tokens(ia_index).map(Token::char_len).sum()
    }

    /// Mean log frequency of the IA's tokens.
    pub fn ia_log_freq(&self, ia_index: usize) -> f64 {
        let ia = &self.ias[ia_index];
        let sum: f64 = self.ia_tokens(ia_index).map(|t| t.log_freq).sum();
        sum / ia.token_indices.len() as f64
    }
}

/// Case-insensitive stopword lookup.
#[derive(Debug, Clone, Default)]
pub struct StopwordSet {
    words: HashSet<String>,
}

impl StopwordSet {
    /// The bundled English list (179 entries).
    pub fn english() -> Self {
        Self::from_words(ENGLISH_STOPWORDS.lines())
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        StopwordSet { words }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Whether a token gets merged into a neighbouring content word: flagged
    /// in the input, listed, or consisting only of punctuation.
    pub fn is_function_token(&self, token: &Token) -> bool {
        token.is_stopword || self.contains(&token.text) || is_punctuation(&token.text)
    }
}

pub fn is_punctuation(text: &str) -> bool {
    !text.is_empty() && text.chars().all(|c| !c.is_alphanumeric())
}

pub fn validate_tokens(tokens: &[Token]) -> Result<()> {
    for (i, t) in tokens.iter().enumerate() {
        if t.char_start >= t.char_end {
            return Err(Error::invalid(format!(
                "token {i} `{}`: char_start {} must be < char_end {}",
                t.text, t.char_start, t.char_end
            )));
        }
        if i > 0 {
            let prev = &tokens[i - 1];
            if t.char_start < prev.char_end {
                return Err(Error::invalid(format!(
                    "token {i} `{}`: offsets overlap or are out of order (starts at {}, previous ends at {})",
                    t.text, t.char_start, prev.char_end
                )));
            }
            if t.line_index < prev.line_index {
                return Err(Error::invalid(format!(
                    "token {i} `{}`: line_index decreases ({} after {})",
                    t.text, t.line_index, prev.line_index
                )));
            }
        }
    }
    Ok(())
}

/// Join member tokens, inserting a single space wherever the source offsets
/// leave a gap ("comment" + "." stays "comment.").
fn ia_text(tokens: &[Token], indices: &[usize]) -> String {
    let mut text = String::new();
    let mut prev_end = None;
    for &i in indices {
        let t = &tokens[i];
        if let Some(end) = prev_end {
            if t.char_start > end {
                text.push(' ');
            }
        }
        text.push_str(&t.text);
        prev_end = Some(t.char_end);
    }
    text
}

/// Group tokens into interest areas.
///
/// Each function token (see [`StopwordSet::is_function_token`]) is attached to
/// the nearest content token on the same line by token-index distance; on a
/// tie the right-hand content token wins. A line with no content token
/// becomes a single IA and a warning is logged.
pub fn segment_interest_areas(tokens: &[Token], stopwords: &StopwordSet) -> Result<Vec<InterestArea>> {
    if tokens.is_empty() {
        return Err(Error::invalid("cannot segment an empty token list"));
    }
    validate_tokens(tokens)?;

    // owner[i] = index of the anchoring content token (or line start for
    // all-function lines); IAs are maximal runs of equal owner.
    let mut owner = vec![0usize; tokens.len()];
    let mut line_start = 0;
    while line_start < tokens.len() {
        let line = tokens[line_start].line_index;
        let line_end = tokens[line_start..]
            .iter()
            .position(|t| t.line_index != line)
            .map_or(tokens.len(), |p| line_start + p);

        let anchors: Vec<usize> = (line_start..line_end)
            .filter(|&i| !stopwords.is_function_token(&tokens[i]))
            .collect();

        if anchors.is_empty() {
            log::warn!(
                "line {line} (tokens {line_start}..{line_end}) has no content word; kept as one IA"
            );
            owner[line_start..line_end].fill(line_start);
        } else {
            let mut next = 0; // first anchor index >= i
            for i in line_start..line_end {
                while next < anchors.len() && anchors[next] < i {
                    next += 1;
                }
                if next < anchors.len() && anchors[next] == i {
                    owner[i] = i;
                    continue;
                }
                let left = next.checked_sub(1).map(|k| anchors[k]);
                let right = anchors.get(next).copied();
                owner[i] = match (left, right) {
                    (Some(l), Some(r)) => {
                        if r - i <= i - l {
                            r
                        } else {
                            l
                        }
                    }
                    (Some(l), None) => l,
                    (None, Some(r)) => r,
                    (None, None) => unreachable!("line has at least one anchor"),
                };
            }
        }
        line_start = line_end;
    }

    let mut ias: Vec<InterestArea> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for i in 0..tokens.len() {
        if let Some(&last) = current.last() {
            if owner[last] != owner[i] {
                let ia_index = ias.len();
                ias.push(InterestArea {
                    ia_index,
                    text: ia_text(tokens, &current),
                    token_indices: std::mem::take(&mut current),
                });
            }
        }
        current.push(i);
    }
    let ia_index = ias.len();
    ias.push(InterestArea {
        ia_index,
        text: ia_text(tokens, &current),
        token_indices: current,
    });
    Ok(ias)
}

/// Check that `ias` is an ordered partition of the tokens into contiguous,
/// single-line runs.
pub fn validate_ias(tokens: &[Token], ias: &[InterestArea]) -> Result<()> {
    let mut expected = 0usize;
    for (k, ia) in ias.iter().enumerate() {
        if ia.ia_index != k {
            return Err(Error::invalid(format!("IA {k} carries ia_index {}", ia.ia_index)));
        }
        if ia.token_indices.is_empty() {
            return Err(Error::invalid(format!("IA {k} is empty")));
        }
        for &t in &ia.token_indices {
            if t != expected {
                return Err(Error::invalid(format!(
                    "IA {k}: expected token {expected}, found {t} (IAs must be contiguous and cover every token once)"
                )));
            }
            expected += 1;
        }
        let first = tokens
            .get(ia.token_indices[0])
            .ok_or_else(|| Error::invalid(format!("IA {k} references a missing token")))?;
        if ia.token_indices.iter().any(|&t| tokens[t].line_index != first.line_index) {
            return Err(Error::invalid(format!("IA {k} spans a line break")));
        }
    }
    if expected != tokens.len() {
        return Err(Error::invalid(format!(
            "IAs cover {expected} of {} tokens",
            tokens.len()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct StimulusRecord<'a> {
    stimulus_id: &'a str,
    style: Style,
    source: Source,
    text: &'a str,
    tokens: &'a [Token],
    ias: Vec<&'a [usize]>,
}

pub fn stimulus_to_json_line(stimulus: &Stimulus) -> String {
    let record = StimulusRecord {
        stimulus_id: &stimulus.stimulus_id,
        style: stimulus.style,
        source: stimulus.source,
        text: &stimulus.text,
        tokens: &stimulus.tokens,
        ias: stimulus.ias.iter().map(|ia| ia.token_indices.as_slice()).collect(),
    };
    serde_json::to_string(&record).expect("stimulus records always serialize")
}

pub fn load_stimuli(path: &Path) -> Result<Vec<Stimulus>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_stimuli(&content, &path.display().to_string(), &StopwordSet::english())
}

/// Parse the line-delimited JSON stimulus format. IAs are taken from the
/// optional `ias` field (lists of token indices) or computed.
pub fn parse_stimuli(content: &str, file: &str, stopwords: &StopwordSet) -> Result<Vec<Stimulus>> {
    let mut stimuli = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in content.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| Error::parse(file, line_no, "<record>", e.to_string()))?;
        let stimulus = parse_record(&value, file, line_no, stopwords)?;
        if !seen.insert(stimulus.stimulus_id.clone()) {
            return Err(Error::parse(
                file,
                line_no,
                "stimulus_id",
                format!("duplicate id `{}`", stimulus.stimulus_id),
            ));
        }
        stimuli.push(stimulus);
    }
    Ok(stimuli)
}

fn parse_record(value: &Value, file: &str, line: usize, stopwords: &StopwordSet) -> Result<Stimulus> {
    let err = |field: &str, msg: String| Error::parse(file, line, field, msg);
    let obj = value
        .as_object()
        .ok_or_else(|| err("<record>", "expected a JSON object".into()))?;

    let str_field = |name: &str| -> Result<&str> {
        obj.get(name)
            .ok_or_else(|| err(name, "missing".into()))?
            .as_str()
            .ok_or_else(|| err(name, "expected a string".into()))
    };

    let stimulus_id = str_field("stimulus_id")?.to_string();
    let style: Style = str_field("style")?.parse().map_err(|e| err("style", e))?;
    let source: Source = str_field("source")?.parse().map_err(|e| err("source", e))?;
    let text = str_field("text")?.to_string();
    let text_chars: Vec<char> = text.chars().collect();

    let raw_tokens = obj
        .get("tokens")
        .ok_or_else(|| err("tokens", "missing".into()))?
        .as_array()
        .ok_or_else(|| err("tokens", "expected an array".into()))?;

    let mut tokens = Vec::with_capacity(raw_tokens.len());
    for (i, raw) in raw_tokens.iter().enumerate() {
        let field = |name: &str| format!("tokens[{i}].{name}");
        let t = raw
            .as_object()
            .ok_or_else(|| err(&format!("tokens[{i}]"), "expected an object".into()))?;
        let get_str = |name: &str| -> Result<String> {
            t.get(name)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| err(&field(name), "missing or not a string".into()))
        };
        let get_uint = |name: &str| -> Result<usize> {
            t.get(name)
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| err(&field(name), "missing or not a non-negative integer".into()))
        };
        let token_text = get_str("text")?;
        let char_start = get_uint("char_start")?;
        let char_end = get_uint("char_end")?;
        let line_index = get_uint("line_index")?;
        let pos_tag = match t.get("pos_tag") {
            None | Some(Value::Null) => String::new(),
            Some(v) => v
                .as_str()
                .ok_or_else(|| err(&field("pos_tag"), "expected a string".into()))?
                .to_string(),
        };
        let log_freq = t
            .get("log_freq")
            .and_then(Value::as_f64)
            .ok_or_else(|| err(&field("log_freq"), "missing or not a number".into()))?;
        if !log_freq.is_finite() {
            return Err(err(&field("log_freq"), "must be finite".into()));
        }
        let is_stopword = match t.get("is_stopword") {
            None | Some(Value::Null) => stopwords.contains(&token_text) || is_punctuation(&token_text),
            Some(v) => v
                .as_bool()
                .ok_or_else(|| err(&field("is_stopword"), "expected a boolean".into()))?,
        };

        if char_start >= char_end {
            return Err(err(
                &field("char_start"),
                format!("char_start {char_start} must be < char_end {char_end}"),
            ));
        }
        if char_end > text_chars.len() {
            return Err(err(
                &field("char_end"),
                format!("{char_end} exceeds text length {}", text_chars.len()),
            ));
        }
        let span: String = text_chars[char_start..char_end].iter().collect();
        if span != token_text {
            return Err(err(
                &field("text"),
                format!("`{token_text}` does not match text span `{span}`"),
            ));
        }
        tokens.push(Token {
            text: token_text,
            char_start,
            char_end,
            line_index,
            pos_tag,
            is_stopword,
            log_freq,
        });
    }

    if tokens.is_empty() {
        return Err(err("tokens", "must not be empty".into()));
    }
    validate_tokens(&tokens).map_err(|e| err("tokens", e.to_string()))?;

    let ias = match obj.get("ias") {
        None | Some(Value::Null) => {
            segment_interest_areas(&tokens, stopwords).map_err(|e| err("tokens", e.to_string()))?
        }
        Some(v) => {
            let groups: Vec<Vec<usize>> = serde_json::from_value(v.clone())
                .map_err(|e| err("ias", format!("expected lists of token indices: {e}")))?;
            let ias: Vec<InterestArea> = groups
                .into_iter()
                .enumerate()
                .map(|(k, idx)| InterestArea {
                    ia_index: k,
                    text: if idx.iter().all(|&i| i < tokens.len()) {
                        ia_text(&tokens, &idx)
                    } else {
                        String::new()
                    },
                    token_indices: idx,
                })
                .collect();
            validate_ias(&tokens, &ias).map_err(|e| err("ias", e.to_string()))?;
            ias
        }
    };

    Ok(Stimulus {
        stimulus_id,
        style,
        source,
        text,
        tokens,
        ias,
    })
}

/// Build tokens from whitespace-separated words, one input line per display
/// line. Used by tests and examples; real stimuli come from the JSON format.
pub fn tokens_from_lines(lines: &[&str]) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut offset = 0;
    for (line_index, line) in lines.iter().enumerate() {
        let mut col = 0;
        for word in line.split(' ') {
            let len = word.chars().count();
            if len > 0 {
                tokens.push(Token::new(word, offset + col, line_index));
            }
            col += len + 1;
        }
        offset += line.chars().count() + 1;
    }
    tokens
}
