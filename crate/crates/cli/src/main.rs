mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "gazesal", version, about = "Eye-tracking saliency maps for styled text")]
struct Cli {
    /// key = value file pinning defaults; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tokenized stimuli → stimuli with interest areas
    Segment(SegmentArgs),
    /// Fixation report → cleaned report with IA assignments
    Ingest(IngestArgs),
    /// Cleaned report → per-(trial, IA) reading measures
    Metrics(MetricsArgs),
    /// Measure table → aggregated saliency map and its median binarization
    Saliency(SaliencyArgs),
    /// Saliency maps and token scores → Jaccard, Venn, correlation and POS report
    Compare(CompareArgs),
    /// Saliency map → HTML heatmap
    Report(ReportArgs),
    /// Stimuli (and a saliency map) → few-shot classification prompts
    Prompts(PromptsArgs),
    /// Prompts and completions per round → accuracy report
    Score(ScoreArgs),
    /// Measure table → congruency mixed-model fit
    Lmm(LmmArgs),
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    pub stimuli: PathBuf,
    /// one stopword per line; the built-in English list otherwise
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub stimuli: PathBuf,
    #[arg(long)]
    pub fixations: PathBuf,
    /// IA rectangles; required when the report has no ia_index column
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub threshold_trackloss: Option<f64>,
    #[arg(long)]
    pub min_fixation_ms: Option<i64>,
    /// "none" disables the upper outlier rule
    #[arg(long)]
    pub sd_multiplier: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub stimuli: PathBuf,
    #[arg(long)]
    pub fixations: PathBuf,
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub stimuli: PathBuf,
    /// measure table written by `metrics`
    #[arg(long)]
    pub measures: PathBuf,
    /// ffd|frd|gp|dt|rr|ps|fc|reg
    #[arg(long)]
    pub measure: Option<String>,
    /// zscore|raw|lme
    #[arg(long)]
    pub agg: Option<String>,
    /// all|congruent|incongruent|contrast
    #[arg(long)]
    pub condition: Option<String>,
    /// population|sample
    #[arg(long)]
    pub sd: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub stimuli: PathBuf,
    /// saliency map files (any number of sources each)
    #[arg(long = "maps")]
    pub maps: Vec<PathBuf>,
    /// token score files (surprisal / ig)
    #[arg(long = "token-scores")]
    pub token_scores: Vec<PathBuf>,
    /// per-annotator highlight file
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// three source labels for the Venn partition, comma-separated
    #[arg(long, value_delimiter = ',')]
    pub venn: Vec<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub stimuli: PathBuf,
    #[arg(long)]
    pub maps: PathBuf,
    /// source label to render when the file holds several maps
    #[arg(long)]
    pub source: Option<String>,
    /// map whose median-binarized IAs form the comparison row
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub reference_source: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct PromptsArgs {
    #[arg(long)]
    pub stimuli: PathBuf,
    /// saliency map for the "Important words" lines; baseline prompts without it
    #[arg(long)]
    pub maps: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<String>,
    /// the two task labels, e.g. Polite,Impolite
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// explicit round seeds; otherwise `rounds` seeds counting up from --seed
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// one prompt file per round
    #[arg(long = "prompts", required = true)]
    pub prompts: Vec<PathBuf>,
    /// one completion file per round, same order as --prompts
    #[arg(long = "completions", required = true)]
    pub completions: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct LmmArgs {
    #[arg(long)]
    pub stimuli: PathBuf,
    #[arg(long)]
    pub measures: PathBuf,
    #[arg(long)]
    pub measure: Option<String>,
    /// fit on centred/scaled columns and report in those units
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn run(cli: Cli) -> gazesal::Result<()> {
    let settings = settings::Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Segment(a) => commands::segment(&a),
        Command::Ingest(a) => commands::ingest(&a, &settings),
        Command::Metrics(a) => commands::metrics(&a),
        Command::Saliency(a) => commands::saliency(&a, &settings),
        Command::Compare(a) => commands::compare(&a),
        Command::Report(a) => commands::report(&a),
        Command::Prompts(a) => commands::prompts(&a, &settings),
        Command::Score(a) => commands::score(&a),
        Command::Lmm(a) => commands::lmm(&a, &settings),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
