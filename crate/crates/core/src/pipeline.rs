//! Subcommands of the end-to-end pipeline, sharing one output directory.
//!
//! | command  | reads                                   | writes                                  |
//! |----------|-----------------------------------------|-----------------------------------------|
//! | `synth`  | optional plant JSON                     | model, vocabulary, corpus, manifest     |
//! | `stats`  | model, corpus                           | `stats-<kind>.natlas`, `stats-<kind>.json` |
//! | `select` | `stats-<kind>.natlas`                   | `sets-<kind>.json`                      |
//! | `setops` | `sets-language.json`, `sets-culture.json`, culture map | `catalog.json`           |
//! | `ablate` | model, corpus, `catalog.json`           | `ppl-<kind>.csv`, `ppl-<kind>.json`     |
//! | `report` | `catalog.json`, any `ppl-<kind>.json`   | `histogram.csv`, `report.json`, `heatmap-<kind>.csv` |
//!
//! Every JSON output carries the full [`RunConfig`] under `run`. Outputs contain no
//! timestamps, so identical configs produce identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    cap_budget, ingest_dir, load_culture_map, split_holdout, LabelKind, Tokenizer, TokenizerSpec, TokenStream,
};
use crate::entropy::score_all;
use crate::error::{Error, Result};
use crate::intervention::{ablation_matrix, InterventionSpec, PplMatrix, RandomControl};
use crate::io::{read_json, write_atomic, write_json_atomic};
use crate::model::Model;
use crate::report::{heatmap_csv, summarize, HeatmapField, LayerHistogram, SetSummary};
use crate::select::{select, SelectionConfig, SelectionResult};
use crate::sets::SetCatalog;
use crate::stats::StatsTable;
use crate::synthetic::{self, PlantSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Synth,
    Stats,
    Select,
    Setops,
    Ablate,
    Report,
}

/// Tokens per label generated by `synth` when no budget is given.
pub const DEFAULT_SYNTH_TOKENS: usize = 200_000;
pub const DEFAULT_HOLDOUT_TOKENS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub corpus_root: Option<PathBuf>,
    pub tokenizer: TokenizerSpec,
    pub kind: LabelKind,
    pub fraction: f64,
    pub floor: f64,
    pub tau: Option<f64>,
    pub culture_map: Option<PathBuf>,
    pub seed: u64,
    /// Training tokens per label for `stats`; tokens per label for `synth`.
    pub budget: Option<usize>,
    pub holdout_tokens: usize,
    pub random_replicates: usize,
    pub exclude_identified: bool,
    pub subtract_all_languages: bool,
    /// Plant description for `synth`; defaults apply when absent.
    pub plant: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command, out: impl Into<PathBuf>) -> Self {
        Self {
            command,
            out: out.into(),
            model: None,
            corpus_root: None,
            tokenizer: TokenizerSpec::Byte,
            kind: LabelKind::Language,
            fraction: 0.01,
            floor: 0.9,
            tau: None,
            culture_map: None,
            seed: 0,
            budget: None,
            holdout_tokens: DEFAULT_HOLDOUT_TOKENS,
            random_replicates: 5,
            exclude_identified: false,
            subtract_all_languages: false,
            plant: None,
        }
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            fraction: self.fraction,
            activation_floor: self.floor,
            kind: self.kind,
            tau_override: self.tau,
        }
    }

    pub fn stats_path(&self, kind: LabelKind) -> PathBuf {
        self.out.join(format!("stats-{kind}.natlas"))
    }

    pub fn sets_path(&self, kind: LabelKind) -> PathBuf {
        self.out.join(format!("sets-{kind}.json"))
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.out.join("catalog.json")
    }

    pub fn ppl_path(&self, kind: LabelKind, ext: &str) -> PathBuf {
        self.out.join(format!("ppl-{kind}.{ext}"))
    }

    /// Checks that every input of the subcommand exists.
    pub fn validate(&self) -> Result<()> {
        self.selection().validate()?;
        let need = |what: &str, p: Option<&Path>| -> Result<()> {
            match p {
                None => Err(Error::Config(format!("{} requires {what}", self.command_name()))),
                Some(p) if !p.exists() => Err(Error::Config(format!("{what} {} does not exist", p.display()))),
                Some(_) => Ok(()),
            }
        };
        let tokenizer = || match &self.tokenizer {
            TokenizerSpec::VocabMap { path, .. } => need("a vocabulary file", Some(path)),
            TokenizerSpec::Byte => Ok(()),
        };
        match self.command {
            Command::Synth => {
                if let Some(p) = &self.plant {
                    need("a plant file", Some(p))?;
                }
            }
            Command::Stats => {
                need("--model", self.model.as_deref())?;
                need("--corpus-root", self.corpus_root.as_deref())?;
                tokenizer()?;
            }
            Command::Select => need("a stats file", Some(&self.stats_path(self.kind)))?,
            Command::Setops => {
                need("language sets", Some(&self.sets_path(LabelKind::Language)))?;
                need("culture sets", Some(&self.sets_path(LabelKind::Culture)))?;
                need("--culture-map", self.culture_map.as_deref())?;
            }
            Command::Ablate => {
                need("--model", self.model.as_deref())?;
                need("--corpus-root", self.corpus_root.as_deref())?;
                need("a catalog", Some(&self.catalog_path()))?;
                tokenizer()?;
                if self.holdout_tokens == 0 {
                    return Err(Error::Config("ablation needs --holdout-tokens > 0".into()));
                }
            }
            Command::Report => need("a catalog", Some(&self.catalog_path()))?,
        }
        Ok(())
    }

    fn command_name(&self) -> String {
        serde_json::to_value(self.command)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }

    fn model_path(&self) -> &Path {
        self.model.as_deref().expect("validated")
    }

    /// `<corpus-root>/<kind>` when it exists, else the root itself.
    pub fn kind_root(&self, kind: LabelKind) -> PathBuf {
        let root = self.corpus_root.as_deref().expect("validated");
        let sub = root.join(kind.to_string());
        if sub.is_dir() {
            sub
        } else {
            root.to_path_buf()
        }
    }
}

/// A JSON output: the producing config followed by the payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Output<T> {
    pub run: RunConfig,
    #[serde(flatten)]
    pub body: T,
}

fn write_output<T: Serialize + Clone>(path: &Path, config: &RunConfig, body: &T) -> Result<()> {
    write_json_atomic(
        path,
        &Output {
            run: config.clone(),
            body: body.clone(),
        },
    )
}

fn ensure_out(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub documents: usize,
    pub tokens: usize,
    pub train_tokens: usize,
    pub holdout_tokens: usize,
}

/// Tokenized per-label streams split into (train, holdout) exactly as
/// `stats` and `ablate` both see them.
pub fn load_streams(
    config: &RunConfig,
    kind: LabelKind,
) -> Result<(Tokenizer, BTreeMap<String, (TokenStream, TokenStream, StreamInfo)>)> {
    let tok = Tokenizer::from_spec(&config.tokenizer)?;
    let mut out = BTreeMap::new();
    for corpus in ingest_dir(&config.kind_root(kind), kind)? {
        let stream = tok.tokenize(&corpus)?;
        let (train, holdout) = if config.holdout_tokens > 0 {
            split_holdout(&stream, config.holdout_tokens, config.seed)?
        } else {
            (stream.clone(), TokenStream::new())
        };
        let train = match config.budget {
            Some(b) => cap_budget(&train, b),
            None => train,
        };
        let info = StreamInfo {
            documents: stream.n_documents(),
            tokens: stream.n_tokens(),
            train_tokens: train.n_tokens(),
            holdout_tokens: holdout.n_tokens(),
        };
        out.insert(corpus.label.name.clone(), (train, holdout, info));
    }
    Ok((tok, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub kind: LabelKind,
    pub model_fingerprint: String,
    pub tokenizer_fingerprint: String,
    pub streams: BTreeMap<String, StreamInfo>,
    pub counted_tokens: BTreeMap<String, u64>,
}

pub fn cmd_stats(config: &RunConfig) -> Result<StatsTable> {
    config.validate()?;
    let model = Model::<f32>::load(config.model_path())?;
    let (tok, streams) = load_streams(config, config.kind)?;
    let labels: Vec<String> = streams.keys().cloned().collect();
    let mut table = StatsTable::for_model(&model, config.kind, labels.clone(), tok.fingerprint())?;
    for (label, (train, _, _)) in &streams {
        table.accumulate(&model, train, label)?;
    }
    ensure_out(config)?;
    let mut c = table.to_container()?;
    c.header.insert("config".into(), serde_json::to_value(config)?);
    c.write(config.stats_path(config.kind))?;
    let report = StatsReport {
        kind: config.kind,
        model_fingerprint: table.model_fingerprint().to_owned(),
        tokenizer_fingerprint: tok.fingerprint().to_owned(),
        streams: streams.into_iter().map(|(k, (_, _, i))| (k, i)).collect(),
        counted_tokens: labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), table.token_count(i)))
            .collect(),
    };
    write_output(&config.out.join(format!("stats-{}.json", config.kind)), config, &report)?;
    Ok(table)
}

pub fn cmd_select(config: &RunConfig) -> Result<SelectionResult> {
    config.validate()?;
    let table = StatsTable::load(config.stats_path(config.kind))?;
    if table.kind() != config.kind {
        return Err(Error::Config(format!(
            "stats file holds {} labels, expected {}",
            table.kind(),
            config.kind
        )));
    }
    let scores = score_all(&table, table.labels())?;
    let result = select(&scores, &config.selection())?;
    ensure_out(config)?;
    write_output(&config.sets_path(config.kind), config, &result)?;
    Ok(result)
}

fn load_selection(path: &Path) -> Result<SelectionResult> {
    Ok(read_json::<Output<SelectionResult>>(path)?.body)
}

pub fn load_catalog(path: &Path) -> Result<SetCatalog> {
    Ok(read_json::<Output<SetCatalog>>(path)?.body)
}

pub fn cmd_setops(config: &RunConfig) -> Result<SetCatalog> {
    config.validate()?;
    let language = load_selection(&config.sets_path(LabelKind::Language))?;
    let culture = load_selection(&config.sets_path(LabelKind::Culture))?;
    if language.model_fingerprint != culture.model_fingerprint {
        return Err(Error::FingerprintMismatch(
            language.model_fingerprint,
            culture.model_fingerprint,
        ));
    }
    let map = load_culture_map(config.culture_map.as_deref().expect("validated"))?;
    let mut catalog = SetCatalog::new(language.neuron_sets(), culture.neuron_sets(), map)?;
    catalog.model_fingerprint = language.model_fingerprint;
    catalog.derive(config.subtract_all_languages)?;
    ensure_out(config)?;
    write_output(&config.catalog_path(), config, &catalog)?;
    Ok(catalog)
}

pub fn cmd_ablate(config: &RunConfig) -> Result<PplMatrix> {
    config.validate()?;
    let model = Model::<f32>::load(config.model_path())?;
    let catalog = load_catalog(&config.catalog_path())?;
    let (_, streams) = load_streams(config, config.kind)?;
    let holdouts: BTreeMap<String, TokenStream> = streams.into_iter().map(|(k, (_, h, _))| (k, h)).collect();

    let sets: Vec<_> = catalog
        .named_sets()
        .into_iter()
        .map(|(name, s)| (name, s.clone()))
        .collect();
    let mut interv = InterventionSpec::new(sets, holdouts.keys().cloned().collect());
    if config.random_replicates > 0 {
        let same_kind = match config.kind {
            LabelKind::Language => &catalog.language,
            LabelKind::Culture => &catalog.culture,
        };
        let size = if same_kind.is_empty() {
            0
        } else {
            (same_kind.values().map(|s| s.len()).sum::<usize>() as f64 / same_kind.len() as f64).round() as usize
        };
        interv = interv.with_random(RandomControl {
            replicates: config.random_replicates,
            seed: config.seed,
            exclude_identified: config.exclude_identified,
            size: Some(size),
        });
        interv.identified = Some(catalog.identified()?);
    }
    let matrix = ablation_matrix(&model, &interv, &holdouts)?;
    ensure_out(config)?;
    let mut csv = matrix.to_csv();
    csv.insert_str(
        csv.find('\n').expect("header line") + 1,
        &format!("# config {}\n", serde_json::to_string(config)?),
    );
    write_atomic(&config.ppl_path(config.kind, "csv"), csv.as_bytes())?;
    write_output(&config.ppl_path(config.kind, "json"), config, &matrix)?;
    Ok(matrix)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub seed: u64,
    pub tokens_per_label: usize,
    pub model_fingerprint: String,
    pub files: Vec<String>,
}

/// Tokens per label of the separate streams on which `synth` measures the
/// manifest's expected diagonal ratios.
pub const ORACLE_STREAM_TOKENS: usize = 20_000;

pub fn cmd_synth(config: &RunConfig) -> Result<synthetic::PlantManifest> {
    config.validate()?;
    let plant: PlantSpec = match &config.plant {
        Some(p) => read_json(p)?,
        None => PlantSpec::default(),
    };
    let tokens = config.budget.unwrap_or(DEFAULT_SYNTH_TOKENS);
    let (spec, weights, mut manifest) = synthetic::build_model(&plant, config.seed)?;
    let corpora = synthetic::build_corpora(&plant, config.seed, tokens)?;
    let oracle = synthetic::build_corpora(&plant, config.seed.wrapping_add(1), ORACLE_STREAM_TOKENS)?;
    manifest.expected_diagonal_ratio = synthetic::expected_diagonal_ratios(&spec, &weights, &manifest, &oracle.all())?;
    synthetic::emit(&config.out, &spec, &weights, &manifest, &corpora)?;
    let report = SynthReport {
        seed: config.seed,
        tokens_per_label: tokens,
        model_fingerprint: manifest.model_fingerprint.clone(),
        files: [
            synthetic::MODEL_FILE,
            synthetic::VOCAB_FILE,
            synthetic::CULTURE_MAP_FILE,
            synthetic::MANIFEST_FILE,
            synthetic::CORPUS_DIR,
        ]
        .map(str::to_owned)
        .to_vec(),
    };
    write_output(&config.out.join("synth.json"), config, &report)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub histogram: LayerHistogram,
    pub summary: SetSummary,
}

pub fn cmd_report(config: &RunConfig) -> Result<Report> {
    config.validate()?;
    let catalog = load_catalog(&config.catalog_path())?;
    let n_layers = match &config.model {
        Some(p) => Model::<f32>::load(p)?.spec().n_layers,
        None => catalog
            .named_sets()
            .iter()
            .flat_map(|(_, s)| s.iter().map(|n| n.layer + 1))
            .max()
            .unwrap_or(0),
    };
    let report = Report {
        histogram: LayerHistogram::from_catalog(&catalog, n_layers)?,
        summary: summarize(&catalog)?,
    };
    ensure_out(config)?;
    write_atomic(&config.out.join("histogram.csv"), report.histogram.to_csv().as_bytes())?;
    for kind in [LabelKind::Language, LabelKind::Culture] {
        let path = config.ppl_path(kind, "json");
        if path.exists() {
            let matrix = read_json::<Output<PplMatrix>>(&path)?.body;
            write_atomic(
                &config.out.join(format!("heatmap-{kind}.csv")),
                heatmap_csv(&matrix, HeatmapField::Ratio).as_bytes(),
            )?;
        }
    }
    write_output(&config.out.join("report.json"), config, &report)?;
    Ok(report)
}

/// Runs the subcommand named in the config.
pub fn run(config: &RunConfig) -> Result<()> {
    match config.command {
        Command::Synth => cmd_synth(config).map(drop),
        Command::Stats => cmd_stats(config).map(drop),
        Command::Select => cmd_select(config).map(drop),
        Command::Setops => cmd_setops(config).map(drop),
        Command::Ablate => cmd_ablate(config).map(drop),
        Command::Report => cmd_report(config).map(drop),
    }
}
