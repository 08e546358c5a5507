//! Declarative end-to-end runs: train, tokenise, collect, estimate, sweep.
//!
//! Every output file is a pure function of the resolved configuration, so a
//! rerun with the same configuration reproduces it byte for byte. Timing
//! information is returned to the caller and never written to disk.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsio;
use crate::lm::{
    load_external_logprobs, perfect_oracle, train_ngram, BackendKind, ModelBackend,
    SyntheticLanguage, SyntheticSpec, UniformModel,
};
use crate::outcomes::{
    collect_outcomes, enumerate_candidates, exclude_nested, nesting_vocabulary, outcomes_csv,
    read_outcomes_csv, window_ranks, CollectOptions, DroppedCandidate, OutcomeRow, OutcomeStat,
};
use crate::rd::{
    fit_rd, fitted_values, fitted_values_csv, local_regression_check, uniform_model_bound_check,
    window_sweep, FitOptions, RdDataset, RdFit, SeKind, SkippedWindow, BOUND_TOLERANCE,
};
use crate::tokeniser::{
    format_token_stream, read_vocab_file, train_ranked_vocab_with, truncate, Alphabet,
    ObjectiveKind, Pretokenizer, RankedVocabulary, SubwordString, SymbolMode, TokFnKind, Tokeniser,
    TrainerConfig,
};
use crate::Execution;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub train: Option<PathBuf>,
    pub eval: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokeniserConfig {
    pub objective: ObjectiveKind,
    pub k_plus: usize,
    pub cutoff: usize,
    pub kind: TokFnKind,
    pub symbols: SymbolMode,
    pub pretokenizer: Pretokenizer,
    /// Use a previously trained ranked vocabulary instead of training.
    pub vocab: Option<PathBuf>,
}

impl Default for TokeniserConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::BpeCount,
            k_plus: 4000,
            cutoff: 2000,
            kind: TokFnKind::MergeBased,
            symbols: SymbolMode::Char,
            pretokenizer: Pretokenizer::LeadingSpace,
            vocab: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// n-gram order.
    pub order: usize,
    /// n-gram add-α smoothing.
    pub alpha: f64,
    /// JSON-lines log-prob file for the external backend.
    pub logprobs: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Ngram,
            order: 3,
            alpha: 0.1,
            logprobs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeConfig {
    pub window: usize,
    pub min_occurrences: usize,
    pub include_doc_start: bool,
    pub stats: Vec<OutcomeStat>,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        Self {
            window: 500,
            min_occurrences: 5,
            include_doc_start: true,
            stats: vec![OutcomeStat::Mean],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub se: SeKind,
    pub poly_order: usize,
    pub weighted: bool,
    /// Windows fitted by `estimate`; empty means the outcome window only.
    pub windows: Vec<usize>,
    /// Windows fitted by `sweep`.
    pub sweep_windows: Vec<usize>,
    pub loess_bandwidth: Option<f64>,
    /// Estimate from an existing outcome CSV instead of collecting.
    pub outcomes: Option<PathBuf>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            se: SeKind::Classical,
            poly_order: 1,
            weighted: false,
            windows: Vec::new(),
            sweep_windows: vec![250, 500, 1000],
            loess_bandwidth: None,
            outcomes: None,
        }
    }
}

/// A generated language whose samples stand in for the corpora.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_strings: usize,
    pub lexicon_size: usize,
    pub max_words: usize,
    pub zipf_exponent: f64,
    /// `probability<TAB>string` file used instead of generating.
    pub language: Option<PathBuf>,
    pub train_docs: usize,
    pub eval_docs: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let spec = SyntheticSpec::default();
        Self {
            n_strings: spec.n_strings,
            lexicon_size: spec.lexicon_size,
            max_words: spec.max_words,
            zipf_exponent: spec.zipf_exponent,
            language: None,
            train_docs: 4000,
            eval_docs: 4000,
        }
    }
}

impl SyntheticConfig {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_strings: self.n_strings,
            lexicon_size: self.lexicon_size,
            max_words: self.max_words,
            zipf_exponent: self.zipf_exponent,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub tokeniser: TokeniserConfig,
    pub backend: BackendConfig,
    pub outcomes: OutcomeConfig,
    pub estimate: EstimateConfig,
    pub synthetic: Option<SyntheticConfig>,
}

/// Command-line replacements for configuration values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub cutoff: Option<usize>,
    pub window: Option<usize>,
    pub stat: Option<OutcomeStat>,
    pub backend: Option<BackendKind>,
    pub seed: Option<u64>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads a TOML file; relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config = Self::from_toml(&fsio::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut config.corpus.train);
        fix(&mut config.corpus.eval);
        fix(&mut config.tokeniser.vocab);
        fix(&mut config.backend.logprobs);
        fix(&mut config.estimate.outcomes);
        if let Some(s) = &mut config.synthetic {
            fix(&mut s.language);
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(c) = o.cutoff {
            self.tokeniser.cutoff = c;
        }
        if let Some(w) = o.window {
            self.outcomes.window = w;
        }
        if let Some(s) = o.stat {
            self.outcomes.stats = vec![s];
        }
        if let Some(b) = o.backend {
            self.backend.kind = b;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tokeniser;
        if t.vocab.is_none() && t.cutoff > t.k_plus {
            return Err(Error::Config(format!(
                "cutoff {} exceeds k_plus {}",
                t.cutoff, t.k_plus
            )));
        }
        if self.outcomes.stats.is_empty() {
            return Err(Error::Config(
                "at least one outcome statistic is required".into(),
            ));
        }
        if self.backend.kind == BackendKind::Custom {
            return Err(Error::Config(
                "custom backends cannot be configured from a file".into(),
            ));
        }
        if self.backend.kind == BackendKind::Perfect && self.synthetic.is_none() {
            return Err(Error::Config(
                "the perfect backend needs a [synthetic] language".into(),
            ));
        }
        if self.backend.kind == BackendKind::External && self.backend.logprobs.is_none() {
            return Err(Error::Config(
                "the external backend needs backend.logprobs".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex(&Sha256::digest(json))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Splits text into documents at `\n`. Joining the documents with `\n`
/// restores the text exactly; empty text has no documents.
pub fn split_documents(text: &str) -> Vec<&str> {
    if text.is_empty() {
        Vec::new()
    } else {
        text.split('\n').collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Corpus,
    Train,
    Tokenise,
    Model,
    Collect,
    Estimate,
    Sweep,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Corpus => "corpus",
            Stage::Train => "train",
            Stage::Tokenise => "tokenise",
            Stage::Model => "model",
            Stage::Collect => "collect",
            Stage::Estimate => "estimate",
            Stage::Sweep => "sweep",
            Stage::Output => "output",
        })
    }
}

/// An error together with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.error.to_string().replace('\n', " ");
        write!(f, "error[{}]: {}", self.stage, msg)
    }
}

impl std::error::Error for StageError {}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

#[derive(Clone, Debug, Serialize)]
struct OutputEntry {
    file: String,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    vocab_file_version: u32,
    command: &'a str,
    config_hash: String,
    config: &'a PipelineConfig,
    outputs: Vec<OutputEntry>,
    summary: serde_json::Value,
}

struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<OutputEntry>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> StageResult<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(dir, e))
            .at(Stage::Output)?;
        Ok(Self {
            dir,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> StageResult<PathBuf> {
        let path = self.dir.join(name);
        fsio::write_atomic(&path, bytes).at(Stage::Output)?;
        self.written.push(OutputEntry {
            file: name.to_string(),
            bytes: bytes.len(),
            sha256: hex(&Sha256::digest(bytes)),
        });
        Ok(path)
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> StageResult<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)
            .map_err(Error::from)
            .at(Stage::Output)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn finish(
        mut self,
        command: &str,
        config: &PipelineConfig,
        summary: serde_json::Value,
    ) -> StageResult<()> {
        let manifest = Manifest {
            tool: "tokbias",
            version: env!("CARGO_PKG_VERSION"),
            vocab_file_version: crate::tokeniser::VOCAB_FILE_VERSION,
            command,
            config_hash: config.hash(),
            config,
            outputs: std::mem::take(&mut self.written),
            summary,
        };
        self.json("manifest.json", &manifest).map(|_| ())
    }
}

/// What a training run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub merges: usize,
    pub truncated: bool,
    pub vocab_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokeniseSummary {
    pub documents: usize,
    pub tokens: usize,
    pub stream_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectSummary {
    /// Tokeniser vocabulary size at the cutoff.
    pub vocab_len: usize,
    pub candidates: usize,
    pub nested_excluded: usize,
    pub rows: Vec<OutcomeRow>,
    pub dropped: Vec<DroppedCandidate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateSummary {
    pub fits: Vec<RdFit>,
    pub skipped: Vec<SkippedWindow>,
    /// For uniform-backend runs: whether every fit respects the `ln |V ∪ EOS|`
    /// lower bound.
    pub uniform_bound_ok: Option<bool>,
}

/// Runs pipeline stages for one resolved configuration.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
    pub execution: Execution,
}

struct Corpora {
    train: Vec<String>,
    eval: Vec<String>,
    language: Option<SyntheticLanguage>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, out_dir: impl Into<PathBuf>) -> StageResult<Self> {
        config.validate().at(Stage::Config)?;
        Ok(Self {
            config,
            out_dir: out_dir.into(),
            execution: Execution::default(),
        })
    }

    fn corpora(&self) -> StageResult<Corpora> {
        let read = |p: &Option<PathBuf>, what: &str| -> StageResult<Vec<String>> {
            let p = p
                .as_ref()
                .ok_or_else(|| Error::Config(format!("corpus.{what} is not set")))
                .at(Stage::Config)?;
            let text = fsio::read_to_string(p).at(Stage::Corpus)?;
            Ok(split_documents(&text)
                .into_iter()
                .map(str::to_string)
                .collect())
        };
        let Some(syn) = &self.config.synthetic else {
            // a supplied vocabulary only needs training text for n-gram models
            let train =
                if self.config.corpus.train.is_none() && self.config.tokeniser.vocab.is_some() {
                    Vec::new()
                } else {
                    read(&self.config.corpus.train, "train")?
                };
            return Ok(Corpora {
                train,
                eval: read(&self.config.corpus.eval, "eval")?,
                language: None,
            });
        };
        let lang = match &syn.language {
            Some(p) => SyntheticLanguage::from_tsv(&fsio::read_to_string(p).at(Stage::Corpus)?),
            None => SyntheticLanguage::generate(&syn.spec(), self.config.seed),
        }
        .at(Stage::Corpus)?;
        let train = match &self.config.corpus.train {
            Some(_) => read(&self.config.corpus.train, "train")?,
            None => lang.sample(
                syn.train_docs,
                &mut ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(1)),
            ),
        };
        let eval = match &self.config.corpus.eval {
            Some(_) => read(&self.config.corpus.eval, "eval")?,
            None => lang.sample(
                syn.eval_docs,
                &mut ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(2)),
            ),
        };
        Ok(Corpora {
            train,
            eval,
            language: Some(lang),
        })
    }

    fn trainer_config(&self) -> TrainerConfig {
        let t = &self.config.tokeniser;
        TrainerConfig {
            objective: t.objective,
            k_plus: t.k_plus,
            symbols: t.symbols,
            pretokenizer: t.pretokenizer,
            execution: self.execution,
        }
    }

    /// Merges come from the training corpus only; the alphabet also covers
    /// the evaluation corpus so that every evaluation document tokenises.
    fn train(&self, corpora: &Corpora) -> StageResult<RankedVocabulary> {
        let config = self.trainer_config();
        let all: Vec<&str> = corpora
            .train
            .iter()
            .chain(&corpora.eval)
            .map(String::as_str)
            .collect();
        let alphabet = Alphabet::from_corpus(config.symbols, &all).at(Stage::Train)?;
        train_ranked_vocab_with(&corpora.train, alphabet, &config).at(Stage::Train)
    }

    fn vocabulary(&self, corpora: &Corpora) -> StageResult<Arc<RankedVocabulary>> {
        let v = match &self.config.tokeniser.vocab {
            Some(p) => read_vocab_file(p).at(Stage::Train)?,
            None => self.train(corpora)?,
        };
        Ok(Arc::new(v))
    }

    fn tokeniser(&self, vocab: &Arc<RankedVocabulary>) -> StageResult<Tokeniser> {
        truncate(
            vocab,
            self.config.tokeniser.cutoff,
            self.config.tokeniser.kind,
        )
        .at(Stage::Tokenise)
    }

    fn model(&self, corpora: &Corpora, tok: &Tokeniser) -> StageResult<ModelBackend> {
        let b = &self.config.backend;
        let backend = match b.kind {
            BackendKind::Uniform => UniformModel::new(tok.vocab_len()).map(ModelBackend::Uniform),
            BackendKind::Ngram => {
                let docs = tokenise_all(tok, &corpora.train, self.execution).at(Stage::Tokenise)?;
                train_ngram(&docs, tok.vocab_len(), b.order, b.alpha, self.execution)
                    .map(|m| ModelBackend::NGram(Arc::new(m)))
            }
            BackendKind::Perfect => {
                let lang = corpora
                    .language
                    .as_ref()
                    .expect("validated: perfect backend has a language");
                perfect_oracle(lang, tok).map(|m| ModelBackend::Perfect(Arc::new(m)))
            }
            BackendKind::External => load_external_logprobs(
                b.logprobs
                    .as_deref()
                    .expect("validated: external backend has a path"),
            )
            .map(|m| ModelBackend::External(Arc::new(m))),
            BackendKind::Custom => unreachable!("rejected by validation"),
        };
        backend.at(Stage::Model)
    }

    /// Trains the ranked vocabulary and writes `vocab.json`.
    pub fn train_tokeniser(&self) -> StageResult<TrainSummary> {
        let corpora = self.corpora()?;
        let vocab = self.train(&corpora)?;
        let mut out = Outputs::new(&self.out_dir)?;
        let json = vocab.to_json().at(Stage::Output)?;
        let vocab_path = out.write("vocab.json", json.as_bytes())?;
        let summary = TrainSummary {
            merges: vocab.num_merges(),
            truncated: vocab.is_truncated(),
            vocab_path,
        };
        out.finish(
            "train-tokeniser",
            &self.config,
            serde_json::json!({
                "merges": summary.merges,
                "truncated": summary.truncated,
                "alphabet": vocab.alphabet().len(),
            }),
        )?;
        Ok(summary)
    }

    /// Tokenises `input` (default: the evaluation corpus) at the cutoff and
    /// writes `tokens.txt` plus the `tokens.vocab.json` id map. With
    /// `decode`, also writes `decoded.txt` rebuilt from the token stream.
    pub fn tokenise(&self, input: Option<&Path>, decode: bool) -> StageResult<TokeniseSummary> {
        let (docs, vocab) = match input {
            Some(p) => {
                let text = fsio::read_to_string(p).at(Stage::Corpus)?;
                let docs: Vec<String> = split_documents(&text)
                    .into_iter()
                    .map(str::to_string)
                    .collect();
                let vocab = match &self.config.tokeniser.vocab {
                    Some(v) => Arc::new(read_vocab_file(v).at(Stage::Train)?),
                    None => self.vocabulary(&self.corpora()?)?,
                };
                (docs, vocab)
            }
            None => {
                let corpora = self.corpora()?;
                let vocab = self.vocabulary(&corpora)?;
                (corpora.eval, vocab)
            }
        };
        let tok = self.tokeniser(&vocab)?;
        let streams = tokenise_all(&tok, &docs, self.execution).at(Stage::Tokenise)?;

        let mut out = Outputs::new(&self.out_dir)?;
        let stream_path = out.write("tokens.txt", format_token_stream(&streams).as_bytes())?;
        out.write(
            "tokens.vocab.json",
            tok.id_map_json().at(Stage::Output)?.as_bytes(),
        )?;
        if decode {
            let decoded: Vec<Vec<u8>> = streams
                .iter()
                .map(|s| tok.detokenise(s))
                .collect::<Result<_>>()
                .at(Stage::Tokenise)?;
            out.write("decoded.txt", &decoded.join(&b'\n'))?;
        }
        let tokens = streams.iter().map(Vec::len).sum();
        out.finish(
            "tokenise",
            &self.config,
            serde_json::json!({ "documents": docs.len(), "tokens": tokens, "vocab_len": tok.vocab_len() }),
        )?;
        Ok(TokeniseSummary {
            documents: docs.len(),
            tokens,
            stream_path,
        })
    }

    fn collect_rows(&self, window: usize, stage: Stage) -> StageResult<CollectSummary> {
        let corpora = self.corpora()?;
        let vocab = self.vocabulary(&corpora)?;
        let tok = self.tokeniser(&vocab)?;
        let cutoff = self.config.tokeniser.cutoff;
        let candidates = enumerate_candidates(&vocab, cutoff, window).at(stage)?;
        let n = candidates.len();
        let candidates = exclude_nested(candidates, nesting_vocabulary(&vocab, cutoff, window));
        let nested_excluded = n - candidates.len();
        let backend = self.model(&corpora, &tok)?;
        let options = CollectOptions {
            min_occurrences: self.config.outcomes.min_occurrences,
            include_doc_start: self.config.outcomes.include_doc_start,
            execution: self.execution,
        };
        let outcomes = collect_outcomes(&corpora.eval, &tok, &backend, &candidates, &options)
            .at(Stage::Collect)?;
        Ok(CollectSummary {
            vocab_len: tok.vocab_len(),
            candidates: n,
            nested_excluded,
            rows: outcomes.rows(),
            dropped: outcomes.dropped,
        })
    }

    fn write_collection(out: &mut Outputs, c: &CollectSummary) -> StageResult<()> {
        out.write("outcomes.csv", &outcomes_csv(&c.rows).at(Stage::Output)?)?;
        out.json("dropped.json", &c.dropped)?;
        Ok(())
    }

    fn collect_summary_json(c: &CollectSummary) -> serde_json::Value {
        serde_json::json!({
            "candidates": c.candidates,
            "nested_excluded": c.nested_excluded,
            "records": c.rows.len(),
            "dropped": c.dropped.len(),
        })
    }

    /// Collects outcomes for the configured window and writes `outcomes.csv`
    /// and `dropped.json`.
    pub fn collect(&self) -> StageResult<CollectSummary> {
        let c = self.collect_rows(self.config.outcomes.window, Stage::Collect)?;
        let mut out = Outputs::new(&self.out_dir)?;
        Self::write_collection(&mut out, &c)?;
        out.finish("collect", &self.config, Self::collect_summary_json(&c))?;
        Ok(c)
    }

    fn available_merges(&self) -> StageResult<usize> {
        match &self.config.tokeniser.vocab {
            Some(p) => Ok(read_vocab_file(p).at(Stage::Train)?.num_merges()),
            None => Ok(self.config.tokeniser.k_plus),
        }
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            se: self.config.estimate.se,
            poly_order: self.config.estimate.poly_order,
            weighted: self.config.estimate.weighted,
        }
    }

    /// Outcome rows either from `estimate.outcomes` or collected at `window`.
    fn rows_for(
        &self,
        window: usize,
        stage: Stage,
    ) -> StageResult<(Vec<OutcomeRow>, Option<CollectSummary>)> {
        match &self.config.estimate.outcomes {
            Some(p) => Ok((read_outcomes_csv(p).at(stage)?, None)),
            None => {
                let c = self.collect_rows(window, stage)?;
                Ok((c.rows.clone(), Some(c)))
            }
        }
    }

    fn bound_check(&self, fits: &[RdFit], collected: Option<&CollectSummary>) -> Option<bool> {
        let c = collected?;
        (self.config.backend.kind == BackendKind::Uniform).then(|| {
            fits.iter()
                .all(|f| uniform_model_bound_check(f, c.vocab_len + 1, BOUND_TOLERANCE))
        })
    }

    /// Fits the discontinuity for every configured statistic and window and
    /// writes `fit_<stat>_w<window>.json` and `fitted_<stat>_w<window>.csv`.
    pub fn estimate(&self) -> StageResult<EstimateSummary> {
        let windows = if self.config.estimate.windows.is_empty() {
            vec![self.config.outcomes.window]
        } else {
            self.config.estimate.windows.clone()
        };
        let available = self.available_merges()?;
        let cutoff = self.config.tokeniser.cutoff;
        for &w in &windows {
            window_ranks(available, cutoff, w).at(Stage::Estimate)?;
        }
        let widest = *windows.iter().max().expect("at least one window");
        let (rows, collected) = self.rows_for(widest, Stage::Estimate)?;

        let mut out = Outputs::new(&self.out_dir)?;
        if let Some(c) = &collected {
            Self::write_collection(&mut out, c)?;
        }
        let options = self.fit_options();
        let mut fits = Vec::new();
        for &stat in &self.config.outcomes.stats {
            for &w in &windows {
                let data = RdDataset::from_rows(&rows, cutoff, w, stat).at(Stage::Estimate)?;
                let fit = fit_rd(&data, &options).at(Stage::Estimate)?;
                out.json(&format!("fit_{stat}_w{w}.json"), &fit)?;
                let fv = fitted_values(&data, &fit);
                out.write(
                    &format!("fitted_{stat}_w{w}.csv"),
                    &fitted_values_csv(&fv).at(Stage::Output)?,
                )?;
                if let Some(bw) = self.config.estimate.loess_bandwidth {
                    let curve = local_regression_check(&data, bw).at(Stage::Estimate)?;
                    out.json(&format!("loess_{stat}_w{w}.json"), &curve)?;
                }
                fits.push(fit);
            }
        }
        let uniform_bound_ok = self.bound_check(&fits, collected.as_ref());
        let mut summary = serde_json::json!({ "fits": fits, "uniform_bound_ok": uniform_bound_ok });
        if let Some(c) = &collected {
            summary["collection"] = Self::collect_summary_json(c);
        }
        out.finish("estimate", &self.config, summary)?;
        Ok(EstimateSummary {
            fits,
            skipped: Vec::new(),
            uniform_bound_ok,
        })
    }

    /// Fits every `estimate.sweep_windows` entry over one collection at the
    /// widest feasible window and writes `sweep_<stat>.json`. Infeasible
    /// windows are skipped and listed.
    pub fn sweep(&self) -> StageResult<EstimateSummary> {
        let windows = &self.config.estimate.sweep_windows;
        if windows.is_empty() {
            return Err(Error::Config("estimate.sweep_windows is empty".into())).at(Stage::Config);
        }
        let available = self.available_merges()?;
        let cutoff = self.config.tokeniser.cutoff;
        let widest = windows
            .iter()
            .copied()
            .filter(|&w| window_ranks(available, cutoff, w).is_ok())
            .max()
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no requested window is feasible around cutoff {cutoff}"
                ))
            })
            .at(Stage::Sweep)?;
        let (rows, collected) = self.rows_for(widest, Stage::Sweep)?;

        let mut out = Outputs::new(&self.out_dir)?;
        if let Some(c) = &collected {
            Self::write_collection(&mut out, c)?;
        }
        let options = self.fit_options();
        let mut fits = Vec::new();
        let mut skipped = Vec::new();
        for &stat in &self.config.outcomes.stats {
            let sweep = window_sweep(
                &rows,
                cutoff,
                available,
                windows,
                stat,
                &options,
                self.execution,
            );
            out.json(
                &format!("sweep_{stat}.json"),
                &serde_json::json!({ "fits": sweep.fits, "skipped": sweep.skipped }),
            )?;
            fits.extend(sweep.fits);
            skipped.extend(sweep.skipped);
        }
        let uniform_bound_ok = self.bound_check(&fits, collected.as_ref());
        out.finish(
            "sweep",
            &self.config,
            serde_json::json!({ "fits": fits, "skipped": skipped, "uniform_bound_ok": uniform_bound_ok }),
        )?;
        Ok(EstimateSummary {
            fits,
            skipped,
            uniform_bound_ok,
        })
    }
}

fn tokenise_all<S: AsRef<str> + Sync>(
    tok: &Tokeniser,
    docs: &[S],
    execution: Execution,
) -> Result<Vec<SubwordString>> {
    execution
        .map_indexed(docs, |i, d| {
            tok.tokenise(d.as_ref()).map_err(|e| e.in_document(i))
        })
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_defaults_and_overrides() {
        let mut c = PipelineConfig::from_toml(
            "seed = 3\n[tokeniser]\nk_plus = 64\ncutoff = 32\n[outcomes]\nstats = [\"mean\", \"iqr\"]\n",
        )
        .unwrap();
        assert_eq!(c.tokeniser.k_plus, 64);
        assert_eq!(c.backend.order, 3);
        assert_eq!(c.outcomes.stats, vec![OutcomeStat::Mean, OutcomeStat::Iqr]);
        let h = c.hash();
        c.apply(&Overrides {
            cutoff: Some(16),
            stat: Some(OutcomeStat::Std),
            ..Overrides::default()
        });
        assert_eq!(c.tokeniser.cutoff, 16);
        assert_eq!(c.outcomes.stats, vec![OutcomeStat::Std]);
        assert_ne!(h, c.hash());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_combinations() {
        assert!(PipelineConfig::from_toml("[tokeniser]\nkplus = 3\n").is_err());
        let c = PipelineConfig::from_toml("[tokeniser]\nk_plus = 3\ncutoff = 4\n").unwrap();
        assert!(c.validate().is_err());
        let c = PipelineConfig::from_toml("[backend]\nkind = \"perfect\"\n").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn document_split_roundtrips() {
        for text in ["", "a", "a\n", "a\n\nb", "\n"] {
            assert_eq!(split_documents(text).join("\n"), text);
        }
        assert!(split_documents("").is_empty());
    }

    #[test]
    fn stage_error_is_one_line() {
        let e = StageError {
            stage: Stage::Collect,
            error: Error::InvalidArgument("a\nb".into()),
        };
        assert_eq!(e.to_string(), "error[collect]: invalid argument: a b");
    }
}
