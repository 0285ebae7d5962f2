use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use cci_core::analysis::{
    country_selection_rates, fit_country_slopes, incremental_consistency, knowledge_audit,
    layer_country_frequencies, layer_stereotype_frequency, layer_wise_kappa,
    persona_match_accuracy, read_activations, read_layer_dump, selection_rate_deltas,
    steering_by_layer, CurvePoint, GoldAnswer, LayerFrequency, LayerKappa, PersonaAccuracy,
    KnowledgeAudit, ResourceRanking, SelectionRates, SlopeTable, StereotypeMap, Variant,
};
use cci_core::bootstrap::{bootstrap_kappa_variance, BootstrapResult, DEFAULT_ITERATIONS};
use cci_core::consensus::{batches_to_jsonl, mine, BalanceMode, MineReport, Orphan, SkippedGroup};
use cci_core::ingest::{
    parse_log, read_dataset, read_responses, slice_by_persona, split_dataset, verdict_accounting,
    LogMetadata, ParseConfig, ResponseLog,
};
use cci_core::metrics::fleiss_kappa_valid_renormalized;
use cci_core::model::{collate_parallel, DroppedGroup};
use cci_core::seed::derive_seed;
use cci_core::{
    ContingencyTable, CountryCode, Dataset, LanguageCode, LanguageSet, MetricError, MetricKind,
    MetricReport, MissingPolicy, Score, VerdictEntry,
};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::config::Config;
use crate::error::{CliError, Context};
use crate::manifest::{now_ms, read_digested, FileDigest, Outputs, RunManifest};
use crate::report;

/// State of one command invocation.
pub(crate) struct Run {
    pub seed: u64,
    pub config: Config,
    config_digest: Option<FileDigest>,
    pub languages: LanguageSet,
    inputs: Vec<FileDigest>,
    pub outputs: Outputs,
    argv: Vec<String>,
    started: u128,
}

impl Run {
    fn new(cli: &Cli, argv: Vec<String>) -> Result<Self, CliError> {
        let started = now_ms();
        let (config, config_digest) = match &cli.config {
            Some(path) => {
                let (bytes, digest) = read_digested(path)?;
                let config: Config = serde_json::from_slice(&bytes).context(path.display())?;
                (config, Some(digest))
            }
            None => (Config::default(), None),
        };
        let languages = match (&cli.languages, &config.languages) {
            (Some(list), _) => LanguageSet::parse(list).context("--languages")?,
            (None, Some(list)) => LanguageSet::new(list.clone()).context("config languages")?,
            (None, None) => LanguageSet::default_eight(),
        };
        Ok(Self {
            seed: cli.seed,
            config,
            config_digest,
            languages,
            inputs: Vec::new(),
            outputs: Outputs::new(&cli.out_dir),
            argv,
            started,
        })
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let (bytes, digest) = read_digested(path)?;
        self.inputs.push(digest);
        Ok(bytes)
    }

    fn dataset(&mut self, path: &Path) -> Result<Dataset, CliError> {
        let bytes = self.read(path)?;
        read_dataset(bytes.as_slice(), &self.languages).context(path.display())
    }

    fn responses(&mut self, path: &Path) -> Result<ResponseLog, CliError> {
        let bytes = self.read(path)?;
        read_responses(bytes.as_slice()).context(path.display())
    }

    fn parse_config(&self, args: &ResponseArgs) -> ParseConfig {
        if !args.answer_field.is_empty() {
            ParseConfig {
                answer_fields: args.answer_field.clone(),
            }
        } else if let Some(fields) = &self.config.answer_fields {
            ParseConfig {
                answer_fields: fields.clone(),
            }
        } else {
            ParseConfig::default()
        }
    }

    fn policy(&self, args: &ResponseArgs) -> MissingPolicy {
        args.missing_policy
            .or(self.config.missing_policy)
            .unwrap_or_default()
    }

    fn verdicts(
        &mut self,
        args: &ResponseArgs,
    ) -> Result<(Dataset, ResponseLog, Vec<VerdictEntry>), CliError> {
        let dataset = self.dataset(&args.dataset)?;
        let log = self.responses(&args.responses)?;
        let entries =
            parse_log(&log, &dataset, &self.parse_config(args)).context(args.responses.display())?;
        Ok((dataset, log, entries))
    }

    /// Configured language groups, or one group `All` over the run's
    /// language set.
    fn language_groups(&self) -> Result<Vec<(String, LanguageSet)>, CliError> {
        let Some(groups) = &self.config.language_groups else {
            return Ok(vec![("All".into(), self.languages.clone())]);
        };
        groups
            .iter()
            .map(|(name, langs)| {
                if let Some(l) = langs.iter().find(|l| !self.languages.contains(l)) {
                    return Err(CliError::input(format!(
                        "language group {name}: {l} is not in the language set"
                    )));
                }
                let set = LanguageSet::new(langs.clone()).context(format!("language group {name}"))?;
                Ok((name.clone(), set))
            })
            .collect()
    }

    fn finish(self, command: &str) -> Result<Vec<PathBuf>, CliError> {
        let manifest = RunManifest {
            tool: "cci".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: self.argv,
            seed: self.seed,
            config: self.config_digest,
            inputs: self.inputs,
            outputs: Vec::new(),
            started_at_unix_ms: self.started,
            finished_at_unix_ms: 0,
        };
        self.outputs.commit(manifest)
    }
}

pub(crate) fn dispatch(cli: &Cli, argv: Vec<String>) -> Result<Vec<PathBuf>, CliError> {
    let mut run = Run::new(cli, argv)?;
    let name = match &cli.command {
        Command::Ingest(IngestCommand::Validate { dataset }) => {
            ingest_validate(&mut run, dataset)?;
            "ingest-validate"
        }
        Command::Split(args) => {
            split(&mut run, args)?;
            "split"
        }
        Command::Parse(args) => {
            parse(&mut run, args)?;
            "parse"
        }
        Command::Measure(args) => {
            measure(&mut run, args)?;
            "measure"
        }
        Command::Mine(args) => {
            mine_batches(&mut run, args)?;
            "mine"
        }
        Command::AnalyzeOrder(args) => {
            analyze_order(&mut run, args)?;
            "analyze-order"
        }
        Command::Audit(args) => {
            audit(&mut run, args)?;
            "audit"
        }
        Command::AnalyzeLayers(args) => {
            analyze_layers(&mut run, args)?;
            "analyze-layers"
        }
        Command::Steering(args) => {
            steering(&mut run, args)?;
            "steering"
        }
        Command::Report(args) => {
            report::consolidate(&mut run, &args.manifests)?;
            "report"
        }
    };
    run.finish(name)
}

pub(crate) fn persona_label(persona: &Option<CountryCode>) -> String {
    persona.as_ref().map_or_else(|| "none".into(), |c| c.to_string())
}

fn parse_persona(label: &str) -> Result<Option<CountryCode>, CliError> {
    match label {
        "none" => Ok(None),
        code => CountryCode::new(code).map(Some).context("--persona"),
    }
}

/// Persona slices sorted by persona, persona-less first.
fn sorted_slices(entries: &[VerdictEntry]) -> Vec<(Option<CountryCode>, Vec<VerdictEntry>)> {
    let mut slices = slice_by_persona(entries);
    slices.sort_by(|a, b| a.0.cmp(&b.0));
    slices
}

pub(crate) fn tsv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut out = header.join("\t");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out.into_bytes()
}

pub(crate) fn score_cell(score: Score) -> String {
    score.value().map_or_else(|| "degenerate".into(), |v| v.to_string())
}

fn opt_cell(value: Option<f64>) -> String {
    value.map_or_else(String::new, |v| v.to_string())
}

#[derive(Serialize)]
struct IncompleteGroup {
    parallel_group_id: String,
    missing_languages: Vec<LanguageCode>,
}

#[derive(Serialize)]
struct IngestReport {
    samples: usize,
    groups: usize,
    languages: Vec<LanguageCode>,
    incomplete_groups: Vec<IncompleteGroup>,
}

fn ingest_validate(run: &mut Run, path: &Path) -> Result<(), CliError> {
    let dataset = run.dataset(path)?;
    let incomplete: Vec<IncompleteGroup> = dataset
        .incomplete_groups()
        .into_iter()
        .map(|(parallel_group_id, missing_languages)| IncompleteGroup {
            parallel_group_id,
            missing_languages,
        })
        .collect();
    println!(
        "{} samples, {} parallel groups, {} incomplete",
        dataset.samples().len(),
        dataset.group_count(),
        incomplete.len()
    );
    let report = IngestReport {
        samples: dataset.samples().len(),
        groups: dataset.group_count(),
        languages: dataset.languages().iter().cloned().collect(),
        incomplete_groups: incomplete,
    };
    run.outputs.add_json("ingest_report.json", &report)
}

fn parse_ratios(text: &str) -> Result<[f64; 3], CliError> {
    let values: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::input(format!("--ratios {text:?}: {e}")))?;
    <[f64; 3]>::try_from(values)
        .map_err(|v| CliError::input(format!("--ratios needs three values, got {}", v.len())))
}

fn split(run: &mut Run, args: &SplitArgs) -> Result<(), CliError> {
    let ratios = parse_ratios(&args.ratios)?;
    let dataset = run.dataset(&args.dataset)?;
    let split = split_dataset(&dataset, ratios, run.seed)?;
    println!(
        "{} supersamples: {}",
        split.assignment.len(),
        split
            .counts
            .iter()
            .map(|(p, n)| format!("{} {n}", serde_json::to_value(p).unwrap().as_str().unwrap_or("?")))
            .collect::<Vec<_>>()
            .join(", ")
    );
    run.outputs.add_json("split.json", &split)
}

#[derive(Serialize)]
struct SliceAccounting {
    valid: usize,
    invalid: usize,
    missing: usize,
    valid_fraction: f64,
    invalid_fraction: f64,
    missing_fraction: f64,
}

#[derive(Serialize)]
struct PersonaParse {
    persona: String,
    accounting: BTreeMap<LanguageCode, SliceAccounting>,
    dropped_groups: Vec<DroppedGroup>,
}

#[derive(Serialize)]
struct ParseReport {
    metadata: LogMetadata,
    answer_fields: Vec<String>,
    missing_policy: MissingPolicy,
    records: usize,
    personas: Vec<PersonaParse>,
}

fn parse(run: &mut Run, args: &ParseArgs) -> Result<(), CliError> {
    let (dataset, log, entries) = run.verdicts(&args.input)?;
    let policy = run.policy(&args.input);
    let mut personas = Vec::new();
    for (persona, slice) in sorted_slices(&entries) {
        let collation = collate_parallel(&dataset, &slice, &run.languages, policy)?;
        let accounting = verdict_accounting(&collation)
            .into_iter()
            .map(|(lang, c)| {
                let (valid_fraction, invalid_fraction, missing_fraction) = c.fractions();
                let row = SliceAccounting {
                    valid: c.valid,
                    invalid: c.invalid,
                    missing: c.missing,
                    valid_fraction,
                    invalid_fraction,
                    missing_fraction,
                };
                (lang, row)
            })
            .collect();
        personas.push(PersonaParse {
            persona: persona_label(&persona),
            accounting,
            dropped_groups: collation.dropped,
        });
    }
    let mut lines = String::new();
    for e in &entries {
        lines.push_str(&serde_json::to_string(e).map_err(|e| CliError::invariant(e.to_string()))?);
        lines.push('\n');
    }
    let valid = entries.iter().filter(|e| e.verdict.is_valid()).count();
    println!("{} records, {valid} valid, {} singleton", entries.len(), entries.len() - valid);
    run.outputs.add("verdicts.jsonl", lines.into_bytes());
    let report = ParseReport {
        metadata: log.metadata,
        answer_fields: run.parse_config(&args.input).answer_fields,
        missing_policy: policy,
        records: entries.len(),
        personas,
    };
    run.outputs.add_json("parse_report.json", &report)
}

/// Min, mean and max over the defined values of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub min: Option<f64>,
    pub avg: Option<f64>,
    pub max: Option<f64>,
    pub defined: usize,
    pub total: usize,
}

impl Aggregate {
    fn over(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut total = 0;
        let defined: Vec<f64> = values
            .into_iter()
            .inspect(|_| total += 1)
            .flatten()
            .collect();
        let avg = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Self {
            min: defined.iter().copied().reduce(f64::min),
            avg,
            max: defined.iter().copied().reduce(f64::max),
            defined: defined.len(),
            total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSlice {
    pub persona: String,
    pub report: MetricReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_valid_renormalized: Option<Score>,
    pub bootstrap: Option<BootstrapResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_error: Option<String>,
    pub dropped_groups: usize,
}

impl MeasureSlice {
    fn metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        let r = &self.report;
        let mut out = vec![
            ("kappa_s", r.kappa_s.value()),
            ("kappa_valid", r.kappa_valid.value()),
            ("soft", Some(r.soft)),
            ("hard", Some(r.hard)),
            ("mode_freq", Some(r.mode_freq)),
            ("error_rate", Some(r.error_rate)),
        ];
        if let Some(k) = self.kappa_valid_renormalized {
            out.push(("kappa_valid_renormalized", k.value()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureGroup {
    pub group: String,
    pub languages: Vec<LanguageCode>,
    pub slices: Vec<MeasureSlice>,
    /// Across persona slices.
    pub aggregate: BTreeMap<String, Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureOutput {
    pub method: String,
    pub missing_policy: MissingPolicy,
    pub bootstrap_iterations: usize,
    pub seed: u64,
    pub groups: Vec<MeasureGroup>,
}

fn measure(run: &mut Run, args: &MeasureArgs) -> Result<(), CliError> {
    let (dataset, log, entries) = run.verdicts(&args.input)?;
    let policy = run.policy(&args.input);
    let iterations = args
        .iterations
        .or(run.config.bootstrap_iterations)
        .unwrap_or(DEFAULT_ITERATIONS);
    let slices = sorted_slices(&entries);
    let mut groups = Vec::new();
    for (name, languages) in run.language_groups()? {
        let mut out = Vec::new();
        for (persona, slice) in &slices {
            let label = persona_label(persona);
            let collation = collate_parallel(&dataset, slice, &languages, policy)?;
            if collation.groups.is_empty() {
                return Err(CliError::input(format!(
                    "group {name}, persona {label}: no parallel groups left to measure"
                )));
            }
            let table = ContingencyTable::from_groups(&collation.groups, &languages)?;
            let seed = derive_seed(run.seed, &["measure", &name, &label]);
            let (bootstrap, bootstrap_error) = match bootstrap_kappa_variance(&table, iterations, seed) {
                Ok(b) => (Some(b), None),
                Err(e @ MetricError::AllDegenerate(_)) => (None, Some(e.to_string())),
                Err(e) => return Err(e.into()),
            };
            out.push(MeasureSlice {
                persona: label,
                report: MetricReport::from_table(&table),
                kappa_valid_renormalized: args
                    .renormalize_valid
                    .then(|| fleiss_kappa_valid_renormalized(&table)),
                bootstrap,
                bootstrap_error,
                dropped_groups: collation.dropped.len(),
            });
        }
        let mut aggregate = BTreeMap::new();
        if let Some(first) = out.first() {
            for (i, (metric, _)) in first.metrics().iter().enumerate() {
                let values = out.iter().map(|s| s.metrics()[i].1);
                aggregate.insert(metric.to_string(), Aggregate::over(values));
            }
        }
        groups.push(MeasureGroup {
            group: name,
            languages: languages.iter().cloned().collect(),
            slices: out,
            aggregate,
        });
    }
    let output = MeasureOutput {
        method: args
            .method
            .clone()
            .or(log.metadata.run_tag.clone())
            .unwrap_or_else(|| "default".into()),
        missing_policy: policy,
        bootstrap_iterations: iterations,
        seed: run.seed,
        groups,
    };
    for g in &output.groups {
        let k = &g.aggregate["kappa_s"];
        println!(
            "{}: kappa_S avg {} over {}/{} personas",
            g.group,
            opt_cell(k.avg),
            k.defined,
            k.total
        );
    }
    write_measure_tables(run, &output);
    run.outputs.add_json("measure.json", &output)
}

fn write_measure_tables(run: &mut Run, output: &MeasureOutput) {
    let rows = output.groups.iter().flat_map(|g| {
        g.slices.iter().map(move |s| {
            let r = &s.report;
            let b = s.bootstrap.as_ref();
            vec![
                output.method.clone(),
                g.group.clone(),
                s.persona.clone(),
                score_cell(r.kappa_s),
                score_cell(r.kappa_valid),
                r.soft.to_string(),
                r.hard.to_string(),
                r.mode_freq.to_string(),
                r.error_rate.to_string(),
                r.samples.to_string(),
                r.raters.to_string(),
                opt_cell(b.map(|b| b.variance)),
                opt_cell(b.map(|b| b.percentile_ci.0)),
                opt_cell(b.map(|b| b.percentile_ci.1)),
            ]
        })
    });
    let header = [
        "method", "group", "persona", "kappa_s", "kappa_valid", "soft", "hard", "mode_freq",
        "error_rate", "N", "n", "bootstrap_variance", "ci_low", "ci_high",
    ];
    run.outputs.add("measure.tsv", tsv(&header, rows));
    let agg_rows = output.groups.iter().flat_map(|g| {
        g.aggregate.iter().map(move |(metric, a)| {
            vec![
                output.method.clone(),
                g.group.clone(),
                metric.clone(),
                opt_cell(a.min),
                opt_cell(a.avg),
                opt_cell(a.max),
                a.defined.to_string(),
                a.total.to_string(),
            ]
        })
    });
    let header = ["method", "group", "metric", "min", "avg", "max", "defined", "total"];
    run.outputs.add("measure_aggregate.tsv", tsv(&header, agg_rows));
}

#[derive(Serialize)]
struct MineSummary {
    persona: String,
    balance: BalanceMode,
    seed: u64,
    dropped_groups: Vec<DroppedGroup>,
    report: MineReport,
}

#[derive(Serialize)]
struct OrphanReport<'a> {
    orphans: &'a [Orphan],
    skipped: &'a [SkippedGroup],
}

fn mine_batches(run: &mut Run, args: &MineArgs) -> Result<(), CliError> {
    let (dataset, _, entries) = run.verdicts(&args.input)?;
    let policy = run.policy(&args.input);
    let mut slices = sorted_slices(&entries);
    let (persona, chosen) = match &args.persona {
        Some(label) => {
            let want = parse_persona(label)?;
            slices
                .into_iter()
                .find(|(p, _)| *p == want)
                .ok_or_else(|| CliError::input(format!("no responses for persona {label}")))?
        }
        None if slices.len() <= 1 => slices.pop().unwrap_or((None, Vec::new())),
        None => {
            return Err(CliError::input(format!(
                "the log holds {} personas; choose one with --persona",
                slices.len()
            )))
        }
    };
    let collation = collate_parallel(&dataset, &chosen, &run.languages, policy)?;
    let out = mine(&dataset, &collation.groups, &run.languages, run.seed, args.balance);
    println!(
        "{} groups, {} with consensus, {} batches, {} orphans, {} skipped",
        out.report.groups,
        out.report.consensus_groups,
        out.report.batches,
        out.report.orphans.len(),
        out.report.skipped.len()
    );
    if let Some(w) = &out.report.warning {
        eprintln!("warning: {w}");
    }
    run.outputs.add(&args.out, batches_to_jsonl(&out.batches).into_bytes());
    run.outputs.add_json(
        "orphans.json",
        &OrphanReport {
            orphans: &out.report.orphans,
            skipped: &out.report.skipped,
        },
    )?;
    let summary = MineSummary {
        persona: persona_label(&persona),
        balance: args.balance,
        seed: run.seed,
        dropped_groups: collation.dropped,
        report: out.report,
    };
    run.outputs.add_json("mine_report.json", &summary)
}

#[derive(Serialize)]
struct PersonaCurve {
    persona: String,
    curve: Vec<CurvePoint>,
}

#[derive(Serialize)]
struct OrderOutput {
    direction: cci_core::analysis::Direction,
    metric: MetricKind,
    ranking: ResourceRanking,
    personas: Vec<PersonaCurve>,
}

fn analyze_order(run: &mut Run, args: &OrderArgs) -> Result<(), CliError> {
    let (dataset, _, entries) = run.verdicts(&args.input)?;
    let policy = run.policy(&args.input);
    let ranking = run
        .config
        .resource_ranking
        .clone()
        .unwrap_or_else(ResourceRanking::known_shares);
    let mut personas = Vec::new();
    for (persona, slice) in sorted_slices(&entries) {
        let collation = collate_parallel(&dataset, &slice, &run.languages, policy)?;
        let curve = incremental_consistency(
            &collation.groups,
            &run.languages,
            &ranking,
            args.direction,
            args.metric,
        )
        .map_err(|e| CliError::from(e).context("resource ranking (set resource_ranking in --config)"))?;
        personas.push(PersonaCurve {
            persona: persona_label(&persona),
            curve,
        });
    }
    let rows = personas.iter().flat_map(|p| {
        p.curve.iter().map(move |c| {
            let langs: Vec<&str> = c.languages.iter().map(LanguageCode::as_str).collect();
            vec![
                p.persona.clone(),
                c.pool_size.to_string(),
                langs.join("+"),
                score_cell(c.value),
            ]
        })
    });
    run.outputs.add("order_curve.tsv", tsv(&["persona", "pool_size", "languages", "value"], rows));
    println!("{} curves of {} points", personas.len(), run.languages.len() - 1);
    let output = OrderOutput {
        direction: args.direction,
        metric: args.metric,
        ranking,
        personas,
    };
    run.outputs.add_json("order_curve.json", &output)
}

#[derive(Serialize)]
struct PersonaRates {
    persona: String,
    rates: SelectionRates,
}

#[derive(Serialize)]
struct PersonaDeltas {
    persona: String,
    deltas: BTreeMap<CountryCode, f64>,
}

#[derive(Serialize)]
struct AuditOutput {
    selection_rates: Vec<PersonaRates>,
    #[serde(skip_serializing_if = "Option::is_none")]
    persona_accuracy: Option<PersonaAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    knowledge: Option<KnowledgeAudit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Vec<PersonaDeltas>>,
}

fn rates_by_persona(
    entries: &[VerdictEntry],
    dataset: &Dataset,
) -> Result<Vec<(String, SelectionRates)>, CliError> {
    sorted_slices(entries)
        .into_iter()
        .map(|(p, slice)| Ok((persona_label(&p), country_selection_rates(&slice, dataset)?)))
        .collect()
}

fn read_gold(bytes: &[u8], path: &Path) -> Result<BTreeMap<String, GoldAnswer>, CliError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut gold = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let answer: GoldAnswer = serde_json::from_str(line)
            .map_err(|e| CliError::input(format!("{} line {}: {e}", path.display(), i + 1)))?;
        gold.insert(answer.sample_id.clone(), answer);
    }
    Ok(gold)
}

fn audit(run: &mut Run, args: &AuditArgs) -> Result<(), CliError> {
    let (dataset, _, entries) = run.verdicts(&args.input)?;
    let rates = rates_by_persona(&entries, &dataset)?;
    let persona_accuracy = if args.personas {
        Some(persona_match_accuracy(&entries, &dataset)?)
    } else {
        None
    };
    let knowledge = match &args.gold {
        Some(path) => {
            let bytes = run.read(path)?;
            let gold = read_gold(&bytes, path)?;
            let seen: BTreeSet<CountryCode> = run
                .config
                .seen_countries
                .clone()
                .unwrap_or_default()
                .into_iter()
                .collect();
            Some(knowledge_audit(&entries, &gold, &seen)?)
        }
        None => None,
    };
    let comparison = match &args.compare {
        Some(path) => {
            let other = run.responses(path)?;
            let other_entries = parse_log(&other, &dataset, &run.parse_config(&args.input))
                .context(path.display())?;
            let theirs: BTreeMap<String, SelectionRates> =
                rates_by_persona(&other_entries, &dataset)?.into_iter().collect();
            Some(
                rates
                    .iter()
                    .filter_map(|(p, mine)| {
                        theirs.get(p).map(|t| PersonaDeltas {
                            persona: p.clone(),
                            deltas: selection_rate_deltas(mine, t),
                        })
                    })
                    .collect(),
            )
        }
        None => None,
    };
    if let Some(acc) = &persona_accuracy {
        println!("persona match accuracy {:.4} over {}", acc.overall.accuracy, acc.overall.total);
    }
    if let Some(k) = &knowledge {
        println!("knowledge accuracy {:.4} over {}", k.overall.accuracy, k.overall.total);
    }
    let output = AuditOutput {
        selection_rates: rates
            .into_iter()
            .map(|(persona, rates)| PersonaRates { persona, rates })
            .collect(),
        persona_accuracy,
        knowledge,
        comparison,
    };
    run.outputs.add_json("audit.json", &output)
}

#[derive(Serialize)]
struct LayerOutput {
    model: String,
    depth: usize,
    format: String,
    stereotypes: StereotypeMap,
    stereotype_frequency: Vec<LayerFrequency>,
    slopes: SlopeTable,
    argmax_language: BTreeMap<CountryCode, LanguageCode>,
    kappa: Vec<LayerKappa>,
}

fn analyze_layers(run: &mut Run, args: &LayerArgs) -> Result<(), CliError> {
    let dataset = run.dataset(&args.dataset)?;
    let bytes = run.read(&args.dump)?;
    let dump = read_layer_dump(bytes.as_slice()).context(args.dump.display())?;
    let stereotypes: StereotypeMap = match &args.stereotypes {
        Some(path) => {
            let bytes = run.read(path)?;
            serde_json::from_slice(&bytes).context(path.display())?
        }
        None => run
            .config
            .stereotypes
            .clone()
            .unwrap_or_else(StereotypeMap::default_eight),
    };
    stereotypes.check_total(&run.languages)?;
    let frequency = layer_stereotype_frequency(&dump, &dataset, &stereotypes)?;
    let slopes = fit_country_slopes(&layer_country_frequencies(&dump, &dataset)?)?;
    let groups = if run.config.language_groups.is_some() {
        run.language_groups()?
    } else {
        Vec::new()
    };
    let kappa = layer_wise_kappa(&dump, &dataset, &groups)?;

    let freq_rows = frequency.iter().map(|f| {
        vec![
            f.language.to_string(),
            f.layer.to_string(),
            f.total.to_string(),
            f.decodable.to_string(),
            f.stereotype_hits.to_string(),
            opt_cell(f.frequency_pct),
            f.undecodable_pct.to_string(),
        ]
    });
    let header = [
        "language", "layer", "total", "decodable", "stereotype_hits", "frequency_pct",
        "undecodable_pct",
    ];
    run.outputs.add("layers_frequency.tsv", tsv(&header, freq_rows));
    let slope_rows = slopes.entries.iter().map(|e| {
        vec![
            e.language.to_string(),
            e.country.to_string(),
            e.fit.slope.to_string(),
            e.fit.intercept.to_string(),
            e.fit.rss.to_string(),
        ]
    });
    let header = ["language", "country", "slope", "intercept", "rss"];
    run.outputs.add("layers_slopes.tsv", tsv(&header, slope_rows));
    let kappa_rows = kappa.iter().map(|k| {
        vec![
            k.group.clone(),
            k.layer.to_string(),
            score_cell(k.kappa_s),
            k.samples.to_string(),
            k.singletons.to_string(),
        ]
    });
    let header = ["group", "layer", "kappa_s", "samples", "singletons"];
    run.outputs.add("layers_kappa.tsv", tsv(&header, kappa_rows));

    println!(
        "{} layers, {} slopes, {} kappa points",
        dump.layers().len(),
        slopes.entries.len(),
        kappa.len()
    );
    let output = LayerOutput {
        model: dump.header.model.clone(),
        depth: dump.header.depth,
        format: dump.header.format.clone(),
        argmax_language: slopes.argmax_language(),
        stereotypes,
        stereotype_frequency: frequency,
        slopes,
        kappa,
    };
    run.outputs.add_json("layers.json", &output)
}

#[derive(Serialize)]
struct SteeringOutput {
    dimension: usize,
    layers: BTreeMap<usize, Vec<f64>>,
}

fn steering(run: &mut Run, args: &SteeringArgs) -> Result<(), CliError> {
    let mut records = Vec::new();
    for (path, variant) in [
        (&args.with_persona, Variant::With),
        (&args.without_persona, Variant::Without),
    ] {
        let bytes = run.read(path)?;
        let batch = read_activations(bytes.as_slice()).context(path.display())?;
        if let Some(r) = batch.iter().find(|r| r.variant != variant) {
            return Err(CliError::input(format!(
                "{}: prompt {} is tagged {:?}, expected {variant:?}",
                path.display(),
                r.prompt_id,
                r.variant
            )));
        }
        records.extend(batch);
    }
    let layers = (!args.layers.is_empty()).then_some(args.layers.as_slice());
    let vectors = steering_by_layer(&records, layers)?;
    let dimension = vectors.values().next().map_or(0, Vec::len);
    println!("{} steering vectors of dimension {dimension}", vectors.len());
    run.outputs.add_json(
        "steering.json",
        &SteeringOutput {
            dimension,
            layers: vectors,
        },
    )
}
