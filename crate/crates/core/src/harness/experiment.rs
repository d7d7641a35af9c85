use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::features::{assemble, FeatureBlock, FeatureSet};
use super::metrics::{chance_baseline, f1_scores, normalize_rows, Averaged, F1Scores};
use super::split::{temporal_split, SplitAssignment};
use crate::cohort::Question;
use crate::error::{Error, Result};
use crate::nn::{
    extract_activations, predict, train, Activation, AdamConfig, Checkpoint, LayerSpec, LossKind, ModelSpec, TrainConfig,
    TrainOutcome,
};
use crate::seed::Seed;

/// Index of the 32-wide hidden layer whose activations feed the hybrid model.
pub const FUSION_LAYER: usize = 2;
pub const FUSION_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingVariant {
    Vggish,
    Rocket,
}

impl SensingVariant {
    pub fn block(self) -> FeatureBlock {
        match self {
            SensingVariant::Vggish => FeatureBlock::SensingVggish,
            SensingVariant::Rocket => FeatureBlock::SensingRocket,
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            SensingVariant::Vggish => "vggish",
            SensingVariant::Rocket => "rocket",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    AudioText,
    Sensing(SensingVariant),
    Hybrid(SensingVariant),
    Overall(SensingVariant),
}

impl ModelKind {
    pub fn name(self) -> String {
        match self {
            ModelKind::AudioText => "audio_text".into(),
            ModelKind::Sensing(v) => format!("sensing_{}", v.suffix()),
            ModelKind::Hybrid(v) => format!("hybrid_{}", v.suffix()),
            ModelKind::Overall(v) => format!("overall_{}", v.suffix()),
        }
    }

    /// The kinds trained for one sensing variant, parents first.
    pub fn for_variant(v: SensingVariant) -> [ModelKind; 3] {
        [ModelKind::Sensing(v), ModelKind::Hybrid(v), ModelKind::Overall(v)]
    }

    pub fn blocks(self) -> Vec<FeatureBlock> {
        match self {
            ModelKind::AudioText => vec![FeatureBlock::Audio, FeatureBlock::Text],
            ModelKind::Sensing(v) => vec![v.block()],
            ModelKind::Hybrid(v) => vec![FeatureBlock::Audio, FeatureBlock::Text, v.block()],
            ModelKind::Overall(v) => vec![FeatureBlock::Audio, FeatureBlock::Text, v.block()],
        }
    }

    /// `(audio_text, sensing)` parents of a hybrid model.
    pub fn parents(self) -> Option<(ModelKind, ModelKind)> {
        match self {
            ModelKind::Hybrid(v) => Some((ModelKind::AudioText, ModelKind::Sensing(v))),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        let variant = |v: &str| match v {
            "" | "vggish" => Ok(SensingVariant::Vggish),
            "rocket" => Ok(SensingVariant::Rocket),
            _ => Err(Error::invalid("model kind", format!("unknown sensing variant `{v}`"))),
        };
        let rest = |p: &str| s.strip_prefix(p).map(|r| r.trim_start_matches('_').to_string());
        if s == "audio_text" {
            Ok(ModelKind::AudioText)
        } else if let Some(r) = rest("sensing") {
            Ok(ModelKind::Sensing(variant(&r)?))
        } else if let Some(r) = rest("hybrid") {
            Ok(ModelKind::Hybrid(variant(&r)?))
        } else if let Some(r) = rest("overall") {
            Ok(ModelKind::Overall(variant(&r)?))
        } else {
            Err(Error::invalid("model kind", format!("unknown kind `{s}`")))
        }
    }
}

impl Serialize for ModelKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_dropout: f64,
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
    pub batch_size: usize,
    pub epochs: usize,
}

pub fn architecture(kind: ModelKind) -> Architecture {
    use Activation::{Relu, Sigmoid, Softmax, Tanh};
    let l = |w, a, d| LayerSpec::new(w, a, d, true);
    let head = |a| LayerSpec::new(4, a, 0.0, false);
    match kind {
        ModelKind::AudioText => Architecture {
            input_dropout: 0.6,
            layers: vec![
                l(512, Relu, 0.4),
                l(128, Relu, 0.2),
                l(32, Relu, 0.0),
                l(16, Relu, 0.0),
                l(8, Relu, 0.0),
                head(Sigmoid),
            ],
            loss: LossKind::SigmoidCrossEntropy,
            batch_size: 64,
            epochs: 80,
        },
        ModelKind::Sensing(_) => Architecture {
            input_dropout: 0.5,
            layers: vec![
                l(512, Tanh, 0.2),
                l(128, Tanh, 0.2),
                l(32, Tanh, 0.0),
                l(16, Tanh, 0.0),
                head(Sigmoid),
            ],
            loss: LossKind::SigmoidCrossEntropy,
            batch_size: 42,
            epochs: 120,
        },
        ModelKind::Hybrid(_) => Architecture {
            input_dropout: 0.5,
            layers: vec![l(32, Tanh, 0.3), l(16, Relu, 0.2), head(Softmax)],
            loss: LossKind::SoftmaxCrossEntropy,
            batch_size: 32,
            epochs: 50,
        },
        ModelKind::Overall(_) => Architecture {
            input_dropout: 0.6,
            layers: vec![
                l(896, Relu, 0.5),
                l(596, Relu, 0.2),
                l(128, Relu, 0.3),
                l(32, Relu, 0.1),
                l(16, Relu, 0.0),
                l(8, Relu, 0.0),
                head(Sigmoid),
            ],
            loss: LossKind::SigmoidCrossEntropy,
            batch_size: 64,
            epochs: 150,
        },
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOverride {
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: Seed,
    pub variants: Vec<SensingVariant>,
    pub adam: AdamConfig,
    /// Keyed by model kind name.
    pub overrides: BTreeMap<String, TrainOverride>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: Seed(0),
            variants: vec![SensingVariant::Vggish],
            adam: AdamConfig::default(),
            overrides: BTreeMap::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn new(seed: Seed) -> Self {
        ExperimentConfig { seed, ..Default::default() }
    }

    /// Every kind to train, parents before the models that depend on them.
    pub fn kinds(&self) -> Vec<ModelKind> {
        let mut out = vec![ModelKind::AudioText];
        for &v in &self.variants {
            out.extend(ModelKind::for_variant(v));
        }
        out
    }

    pub fn model_spec(&self, kind: ModelKind, question: Question) -> ModelSpec {
        let a = architecture(kind);
        let input_width = match kind {
            ModelKind::Hybrid(_) => 2 * FUSION_WIDTH,
            _ => kind.blocks().iter().map(|b| b.width()).sum(),
        };
        ModelSpec {
            input_width,
            input_dropout: a.input_dropout,
            input_batch_norm: true,
            layers: a.layers,
            loss: a.loss,
            seed: self.run_seed("model-init", kind, question),
        }
    }

    pub fn train_config(&self, kind: ModelKind, question: Question) -> TrainConfig {
        let a = architecture(kind);
        let o = self.overrides.get(&kind.name()).copied().unwrap_or_default();
        TrainConfig {
            batch_size: o.batch_size.unwrap_or(a.batch_size),
            epochs: o.epochs.unwrap_or(a.epochs),
            adam: self.adam,
            seed: self.run_seed("model-train", kind, question),
        }
    }

    fn run_seed(&self, tag: &str, kind: ModelKind, question: Question) -> Seed {
        self.seed.derive_with(tag, &[kind.name().as_bytes(), question.as_str().as_bytes()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn indices(self, split: &SplitAssignment) -> &[usize] {
        match self {
            SplitName::Train => &split.train,
            SplitName::Validation => &split.validation,
            SplitName::Test => &split.test,
        }
    }
}

/// Trained `(audio_text, sensing)` parents of a hybrid model.
#[derive(Debug, Clone, Copy)]
pub struct Parents<'a> {
    pub audio_text: &'a Checkpoint,
    pub sensing: &'a Checkpoint,
}

/// Split data and labels for one question.
pub struct Dataset<'a> {
    pub features: &'a FeatureSet,
    pub split: SplitAssignment,
    pub split_digest: String,
}

impl<'a> Dataset<'a> {
    pub fn new(features: &'a FeatureSet) -> Self {
        let keys: Vec<_> = features.instances.iter().map(|i| i.key.clone()).collect();
        let split = temporal_split(&keys);
        let split_digest = split.digest(&keys);
        Dataset {
            features,
            split,
            split_digest,
        }
    }

    pub fn labels(&self, question: Question, which: SplitName) -> Array2<f32> {
        let idx = which.indices(&self.split);
        let mut y = Array2::zeros((idx.len(), 4));
        for (r, &i) in idx.iter().enumerate() {
            y[[r, self.features.instances[i].ordinal(question)]] = 1.0;
        }
        y
    }

    pub fn ordinals(&self, question: Question, which: SplitName) -> Vec<usize> {
        which
            .indices(&self.split)
            .iter()
            .map(|&i| self.features.instances[i].ordinal(question))
            .collect()
    }

    /// Model input rows for one split. Hybrid inputs are the eval-mode
    /// activations of both parents' 32-wide layers, audio-text first.
    pub fn inputs(&self, kind: ModelKind, which: SplitName, parents: Option<Parents<'_>>) -> Result<Array2<f32>> {
        let idx = which.indices(&self.split);
        match kind.parents() {
            None => assemble(self.features, &kind.blocks(), idx),
            Some((at_kind, s_kind)) => {
                let p = parents.ok_or_else(|| Error::Dependency {
                    missing: format!("trained {at_kind} and {s_kind} checkpoints"),
                    hint: format!("train both before {kind}"),
                })?;
                if idx.is_empty() {
                    return Ok(Array2::zeros((0, 2 * FUSION_WIDTH)));
                }
                let a = extract_activations(p.audio_text, &assemble(self.features, &at_kind.blocks(), idx)?, FUSION_LAYER)?;
                let s = extract_activations(p.sensing, &assemble(self.features, &s_kind.blocks(), idx)?, FUSION_LAYER)?;
                if a.ncols() != FUSION_WIDTH || s.ncols() != FUSION_WIDTH {
                    return Err(Error::Shape {
                        name: "fusion activations".into(),
                        expected: vec![idx.len(), FUSION_WIDTH],
                        actual: vec![idx.len(), a.ncols().max(s.ncols())],
                    });
                }
                Ok(concatenate(Axis(1), &[a.view(), s.view()]).expect("same row count"))
            }
        }
    }
}

pub fn train_model(
    data: &Dataset<'_>,
    kind: ModelKind,
    question: Question,
    cfg: &ExperimentConfig,
    parents: Option<Parents<'_>>,
) -> Result<TrainOutcome> {
    let x = data.inputs(kind, SplitName::Train, parents)?;
    let y = data.labels(question, SplitName::Train);
    let vx = data.inputs(kind, SplitName::Validation, parents)?;
    let vy = data.labels(question, SplitName::Validation);
    let val = (vx.nrows() > 0).then_some((&vx, &vy));
    train(&cfg.model_spec(kind, question), &x, &y, val, &cfg.train_config(kind, question))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub model: ModelKind,
    pub split: SplitName,
    pub top1: Averaged,
    pub top2: Averaged,
    pub confusion: [[u64; 4]; 4],
    pub best_epoch: usize,
    pub n_evaluated: usize,
    pub split_digest: String,
}

pub fn evaluate_model(
    data: &Dataset<'_>,
    kind: ModelKind,
    question: Question,
    checkpoint: &Checkpoint,
    parents: Option<Parents<'_>>,
    which: SplitName,
) -> Result<ModelEntry> {
    let x = data.inputs(kind, which, parents)?;
    let truth = data.ordinals(question, which);
    if truth.is_empty() {
        return Err(Error::invalid("evaluation", format!("the {which:?} split is empty")));
    }
    let probs = normalize_rows(&predict(checkpoint, &x)?);
    let F1Scores { top1, top2, confusion } = f1_scores(&probs, &truth)?;
    Ok(ModelEntry {
        model: kind,
        split: which,
        top1,
        top2,
        confusion,
        best_epoch: checkpoint.epoch,
        n_evaluated: truth.len(),
        split_digest: data.split_digest.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionReport {
    /// Test-set class frequencies.
    pub prevalence: [f64; 4],
    pub chance: F1Scores,
    pub models: BTreeMap<String, ModelEntry>,
}

pub fn question_baseline(data: &Dataset<'_>, question: Question) -> Result<(F1Scores, [f64; 4])> {
    let truth = data.ordinals(question, SplitName::Test);
    let chance = chance_baseline(&truth)?;
    let mut prevalence = [0.0; 4];
    truth.iter().for_each(|&t| prevalence[t] += 1.0);
    prevalence.iter_mut().for_each(|p| *p /= truth.len() as f64);
    Ok((chance, prevalence))
}

/// Trains and evaluates every kind for one question.
pub fn run_question(
    data: &Dataset<'_>,
    question: Question,
    cfg: &ExperimentConfig,
) -> Result<(QuestionReport, BTreeMap<ModelKind, Checkpoint>)> {
    let (chance, prevalence) = question_baseline(data, question)?;
    let mut checkpoints: BTreeMap<ModelKind, Checkpoint> = BTreeMap::new();
    let mut models = BTreeMap::new();
    for kind in cfg.kinds() {
        let outcome = {
            let parents = match kind.parents() {
                Some((a, s)) => Some(Parents {
                    audio_text: &checkpoints[&a],
                    sensing: &checkpoints[&s],
                }),
                None => None,
            };
            let outcome = train_model(data, kind, question, cfg, parents)?;
            let entry = evaluate_model(data, kind, question, &outcome.checkpoint, parents, SplitName::Test)?;
            models.insert(kind.name(), entry);
            outcome
        };
        checkpoints.insert(kind, outcome.checkpoint);
    }
    Ok((
        QuestionReport {
            prevalence,
            chance,
            models,
        },
        checkpoints,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: Seed,
    pub cohort_digest: String,
    pub feature_config_digest: String,
    pub split_digest: String,
    pub split_sizes: [usize; 3],
    pub config: ExperimentConfig,
    pub questions: BTreeMap<String, QuestionReport>,
}

impl Report {
    pub fn new(data: &Dataset<'_>, cfg: &ExperimentConfig) -> Self {
        Report {
            seed: cfg.seed,
            cohort_digest: data.features.cohort_digest.clone(),
            feature_config_digest: data.features.config_digest.clone(),
            split_digest: data.split_digest.clone(),
            split_sizes: [data.split.train.len(), data.split.validation.len(), data.split.test.len()],
            config: cfg.clone(),
            questions: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub struct ExperimentOutcome {
    pub report: Report,
    pub checkpoints: BTreeMap<(Question, ModelKind), Checkpoint>,
}

/// Trains and evaluates every kind for every question. Questions run in
/// parallel; each training run is single-threaded and seeded on its own.
pub fn run_experiment(features: &FeatureSet, cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = Dataset::new(features);
    let results = Question::ALL
        .par_iter()
        .map(|&q| run_question(&data, q, cfg).map(|r| (q, r)))
        .collect::<Result<Vec<_>>>()?;
    let mut report = Report::new(&data, cfg);
    let mut checkpoints = BTreeMap::new();
    for (q, (qr, cks)) in results {
        report.questions.insert(q.as_str().to_string(), qr);
        for (k, c) in cks {
            checkpoints.insert((q, k), c);
        }
    }
    Ok(ExperimentOutcome { report, checkpoints })
}

/// Writes the report as pretty JSON with a fixed key order.
pub fn emit_report(report: &Report, path: impl AsRef<std::path::Path>) -> Result<()> {
    if report.questions.is_empty() {
        return Err(Error::invalid("report", "no entries"));
    }
    let path = path.as_ref();
    std::fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architectures_chain_and_validate() {
        let cfg = ExperimentConfig::default();
        for kind in [
            ModelKind::AudioText,
            ModelKind::Sensing(SensingVariant::Vggish),
            ModelKind::Hybrid(SensingVariant::Rocket),
            ModelKind::Overall(SensingVariant::Vggish),
        ] {
            let spec = cfg.model_spec(kind, Question::Power);
            spec.validate().unwrap();
            assert_eq!(spec.output_width(), 4);
        }
        assert_eq!(cfg.model_spec(ModelKind::AudioText, Question::Power).input_width, 896);
        assert_eq!(cfg.model_spec(ModelKind::Sensing(SensingVariant::Rocket), Question::Power).input_width, 896);
        assert_eq!(cfg.model_spec(ModelKind::Hybrid(SensingVariant::Vggish), Question::Power).input_width, 64);
        assert_eq!(cfg.model_spec(ModelKind::Overall(SensingVariant::Vggish), Question::Power).input_width, 1792);
        let t = cfg.train_config(ModelKind::Sensing(SensingVariant::Vggish), Question::Loudness);
        assert_eq!((t.batch_size, t.epochs), (42, 120));
        for kind in [ModelKind::AudioText, ModelKind::Sensing(SensingVariant::Vggish)] {
            assert_eq!(architecture(kind).layers[FUSION_LAYER].width, FUSION_WIDTH);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        let cfg = ExperimentConfig {
            variants: vec![SensingVariant::Vggish, SensingVariant::Rocket],
            ..Default::default()
        };
        for kind in cfg.kinds() {
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        }
        assert_eq!("hybrid".parse::<ModelKind>().unwrap(), ModelKind::Hybrid(SensingVariant::Vggish));
        assert_eq!("sensing-rocket".parse::<ModelKind>().unwrap(), ModelKind::Sensing(SensingVariant::Rocket));
        assert!("fusion".parse::<ModelKind>().is_err());
    }
}
