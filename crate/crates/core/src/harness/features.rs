use std::collections::HashMap;
use std::path::Path;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::archive::{Tensor, TensorArchive};
use crate::cohort::{synthetic_diary_audio, Cohort, DiaryTokenStack, ParticipantId, Question, SensingEvent, ValenceAnswers};
use crate::embedder::{embed_average, EmbedderConfig, EmbedderWeights};
use crate::error::{Error, Result};
use crate::mobility::{hourly_window, MobilityConfig, SensingWindow, N_STREAMS, WINDOW_HOURS};
use crate::rocket::{KernelSharing, RocketTransform, DEFAULT_KERNELS};
use crate::seed::{hex_digest, Seed};
use crate::sonify::{log_mel, patchify, series_patches, LogMelFrontEnd, TransformConfig};
use crate::text::diary_vector;
use crate::time::{Timestamp, MS_PER_HOUR};

pub const AUDIO_WIDTH: usize = 128;
pub const TEXT_WIDTH: usize = 768;
pub const STREAM_WIDTH: usize = 128;
pub const SENSING_WIDTH: usize = N_STREAMS * STREAM_WIDTH;

const FEATURES_KIND: &str = "feature-set";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceKey {
    pub participant_id: ParticipantId,
    pub ema_timestamp: Timestamp,
}

impl std::fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.participant_id, self.ema_timestamp)
    }
}

/// One answered EMA with its one-hot labels per question.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub key: InstanceKey,
    pub answers: ValenceAnswers,
}

impl LabeledInstance {
    pub fn ordinal(&self, q: Question) -> usize {
        self.answers.get(q).index()
    }

    pub fn one_hot(&self, q: Question) -> [f32; 4] {
        one_hot(self.ordinal(q)).expect("ordinals are in range")
    }
}

pub fn one_hot(ordinal: usize) -> Result<[f32; 4]> {
    if ordinal >= 4 {
        return Err(Error::invalid("ordinal", format!("{ordinal} outside 0..=3")));
    }
    let mut v = [0.0; 4];
    v[ordinal] = 1.0;
    Ok(v)
}

/// Answered EMA responses, sorted by participant and time.
pub fn labeled_instances(cohort: &Cohort) -> Vec<LabeledInstance> {
    let mut out: Vec<LabeledInstance> = cohort
        .ema
        .iter()
        .filter_map(|r| {
            r.answers().map(|a| LabeledInstance {
                key: InstanceKey {
                    participant_id: r.participant_id.clone(),
                    ema_timestamp: r.timestamp,
                },
                answers: a.clone(),
            })
        })
        .collect();
    out.sort_by(|a, b| a.key.cmp(&b.key));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureBlock {
    Audio,
    Text,
    SensingVggish,
    SensingRocket,
}

impl FeatureBlock {
    pub const ALL: [FeatureBlock; 4] = [
        FeatureBlock::Audio,
        FeatureBlock::Text,
        FeatureBlock::SensingVggish,
        FeatureBlock::SensingRocket,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureBlock::Audio => "audio",
            FeatureBlock::Text => "text",
            FeatureBlock::SensingVggish => "sensing_vggish",
            FeatureBlock::SensingRocket => "sensing_rocket",
        }
    }

    pub fn width(self) -> usize {
        match self {
            FeatureBlock::Audio => AUDIO_WIDTH,
            FeatureBlock::Text => TEXT_WIDTH,
            FeatureBlock::SensingVggish | FeatureBlock::SensingRocket => SENSING_WIDTH,
        }
    }
}

/// Featurization groups, as run by the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    AudioText,
    SensingVggish,
    SensingRocket,
}

impl FeatureMode {
    pub fn blocks(self) -> &'static [FeatureBlock] {
        match self {
            FeatureMode::AudioText => &[FeatureBlock::Audio, FeatureBlock::Text],
            FeatureMode::SensingVggish => &[FeatureBlock::SensingVggish],
            FeatureMode::SensingRocket => &[FeatureBlock::SensingRocket],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::AudioText => "audio_text",
            FeatureMode::SensingVggish => "sensing_vggish",
            FeatureMode::SensingRocket => "sensing_rocket",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub seed: Seed,
    pub mobility: MobilityConfig,
    /// Its `seed` field is ignored; every series gets a derived seed.
    pub transform: TransformConfig,
    pub embedder: EmbedderConfig,
    pub rocket_kernels: usize,
    pub kernel_sharing: KernelSharing,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            seed: Seed(0),
            mobility: MobilityConfig::default(),
            transform: TransformConfig::default(),
            embedder: EmbedderConfig::desk(Seed(0).derive("embedder")),
            rocket_kernels: DEFAULT_KERNELS,
            kernel_sharing: KernelSharing::Shared,
        }
    }
}

impl FeatureConfig {
    pub fn new(seed: Seed) -> Self {
        FeatureConfig {
            seed,
            embedder: EmbedderConfig::desk(seed.derive("embedder")),
            ..Default::default()
        }
    }

    pub fn digest(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Seed of the sonified waveform for one stream of one instance.
pub fn series_seed(master: Seed, key: &InstanceKey, stream: usize) -> Seed {
    master.derive_with(
        "sonify",
        &[
            key.participant_id.as_str().as_bytes(),
            &key.ema_timestamp.millis().to_le_bytes(),
            &(stream as u64).to_le_bytes(),
        ],
    )
}

/// Feature rows aligned with `instances`; blocks that were not computed are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub instances: Vec<LabeledInstance>,
    pub blocks: HashMap<FeatureBlock, Array2<f32>>,
    pub cohort_digest: String,
    pub config_digest: String,
}

impl FeatureSet {
    pub fn block(&self, b: FeatureBlock) -> Result<&Array2<f32>> {
        self.blocks.get(&b).ok_or_else(|| Error::MissingFeature {
            block: b.name().into(),
            instance: self.instances.first().map_or("(none)".into(), |i| i.key.to_string()),
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Adds the blocks of `other`, which must cover the same instances.
    pub fn merge(&mut self, other: FeatureSet) -> Result<()> {
        if other.instances != self.instances || other.cohort_digest != self.cohort_digest {
            return Err(Error::invalid("feature merge", "feature sets describe different cohorts"));
        }
        self.blocks.extend(other.blocks);
        Ok(())
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let instances: Vec<_> = self
            .instances
            .iter()
            .map(|i| {
                json!({
                    "participant_id": i.key.participant_id,
                    "ema_timestamp": i.key.ema_timestamp,
                    "answers": Question::ALL.map(|q| i.ordinal(q)),
                })
            })
            .collect();
        let mut names: Vec<_> = self.blocks.keys().copied().collect();
        names.sort();
        let mut a = TensorArchive::with_metadata(json!({
            "kind": FEATURES_KIND,
            "cohort_digest": self.cohort_digest,
            "config_digest": self.config_digest,
            "instances": instances,
        }));
        for b in names {
            let m = &self.blocks[&b];
            a.insert(b.name(), Tensor::f32(vec![m.nrows(), m.ncols()], m.iter().copied().collect())?);
        }
        Ok(a)
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        if a.metadata["kind"] != FEATURES_KIND {
            return Err(Error::CorruptArchive(format!("not a {FEATURES_KIND} archive")));
        }
        #[derive(Deserialize)]
        struct Row {
            participant_id: ParticipantId,
            ema_timestamp: Timestamp,
            answers: [u8; 4],
        }
        let rows: Vec<Row> = serde_json::from_value(a.metadata["instances"].clone())?;
        let instances = rows
            .into_iter()
            .map(|r| {
                Ok(LabeledInstance {
                    key: InstanceKey {
                        participant_id: r.participant_id,
                        ema_timestamp: r.ema_timestamp,
                    },
                    answers: ValenceAnswers::from_array(r.answers)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut blocks = HashMap::new();
        for b in FeatureBlock::ALL {
            if a.get(b.name()).is_some() {
                let t = a.expect(b.name(), &[instances.len(), b.width()])?;
                let data = t
                    .as_f32()
                    .ok_or_else(|| Error::CorruptArchive(format!("{} is not f32", b.name())))?;
                blocks.insert(b, Array2::from_shape_vec((instances.len(), b.width()), data.to_vec()).expect("checked shape"));
            }
        }
        let text = |k: &str| a.metadata[k].as_str().unwrap_or_default().to_string();
        Ok(FeatureSet {
            instances,
            blocks,
            cohort_digest: text("cohort_digest"),
            config_digest: text("config_digest"),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(path)?)
    }
}

/// Digest over the labeled instances of a cohort, used to key feature caches.
pub fn cohort_digest(instances: &[LabeledInstance]) -> String {
    let mut s = String::new();
    for i in instances {
        s.push_str(&format!("{} {}", i.key.participant_id, i.key.ema_timestamp.millis()));
        for q in Question::ALL {
            s.push_str(&format!(" {}", i.ordinal(q)));
        }
        s.push('\n');
    }
    hex_digest(s.as_bytes())
}

/// The 24 h sensing windows of every instance, in instance order.
pub fn sensing_windows(cohort: &Cohort, instances: &[LabeledInstance], cfg: &MobilityConfig) -> Result<Vec<SensingWindow>> {
    let by_participant = cohort.events_by_participant();
    let empty: Vec<&SensingEvent> = Vec::new();
    instances
        .par_iter()
        .map(|inst| {
            let events = by_participant.get(&inst.key.participant_id).unwrap_or(&empty);
            let ts = inst.key.ema_timestamp;
            let start = ts - WINDOW_HOURS as i64 * MS_PER_HOUR;
            let lo = events.partition_point(|e| e.timestamp < start);
            let hi = events.partition_point(|e| e.timestamp < ts);
            hourly_window(&inst.key.participant_id, events[lo..hi].iter().copied(), ts, cfg)
        })
        .collect()
}

fn rows_to_matrix(rows: Vec<Vec<f32>>, width: usize) -> Array2<f32> {
    let n = rows.len();
    let flat: Vec<f32> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, width), flat).expect("rows have the block width")
}

fn diary_for<'a>(
    index: &HashMap<(ParticipantId, Timestamp), &'a DiaryTokenStack>,
    key: &InstanceKey,
    block: FeatureBlock,
) -> Result<&'a DiaryTokenStack> {
    index
        .get(&(key.participant_id.clone(), key.ema_timestamp))
        .copied()
        .ok_or_else(|| Error::MissingFeature {
            block: block.name().into(),
            instance: key.to_string(),
        })
}

/// Computes the requested feature groups for every answered EMA.
/// Work items run in parallel; results are collected in instance order and
/// every random draw comes from a per-item seed, so output does not depend on
/// the thread count.
pub fn featurize(cohort: &Cohort, cfg: &FeatureConfig, weights: &EmbedderWeights, modes: &[FeatureMode]) -> Result<FeatureSet> {
    cfg.transform.validate()?;
    if weights.config().embedding_width() != STREAM_WIDTH {
        return Err(Error::invalid(
            "embedder",
            format!("embedding width {} but {STREAM_WIDTH} is required", weights.config().embedding_width()),
        ));
    }
    let instances = labeled_instances(cohort);
    let mut blocks = HashMap::new();
    let needs_windows = modes.iter().any(|m| *m != FeatureMode::AudioText);
    let windows = if needs_windows {
        sensing_windows(cohort, &instances, &cfg.mobility)?
    } else {
        Vec::new()
    };
    for mode in modes {
        match mode {
            FeatureMode::AudioText => {
                let index = cohort.diary_index();
                let audio = instances
                    .par_iter()
                    .map(|inst| {
                        let d = diary_for(&index, &inst.key, FeatureBlock::Audio)?;
                        let patches = patchify(&log_mel(&synthetic_diary_audio(d))?)?;
                        Ok(embed_average(&patches, weights)?.0)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let text = instances
                    .par_iter()
                    .map(|inst| {
                        let d = diary_for(&index, &inst.key, FeatureBlock::Text)?;
                        Ok(diary_vector(d)?.0.into_iter().map(|v| v as f32).collect())
                    })
                    .collect::<Result<Vec<_>>>()?;
                blocks.insert(FeatureBlock::Audio, rows_to_matrix(audio, AUDIO_WIDTH));
                blocks.insert(FeatureBlock::Text, rows_to_matrix(text, TEXT_WIDTH));
            }
            FeatureMode::SensingVggish => {
                let front_end = LogMelFrontEnd::new(Default::default())?;
                let master = cfg.seed.derive("sonify");
                let jobs: Vec<(usize, usize)> = (0..instances.len()).flat_map(|i| (0..N_STREAMS).map(move |s| (i, s))).collect();
                let rows = jobs
                    .par_iter()
                    .map(|&(i, s)| {
                        let t = cfg.transform.with_seed(series_seed(master, &instances[i].key, s));
                        let patches = series_patches(&windows[i].values[s], &t, &front_end)?;
                        Ok(embed_average(&patches, weights)?.0)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let per_instance: Vec<Vec<f32>> = rows.chunks(N_STREAMS).map(|c| c.concat()).collect();
                blocks.insert(FeatureBlock::SensingVggish, rows_to_matrix(per_instance, SENSING_WIDTH));
            }
            FeatureMode::SensingRocket => {
                let rocket = RocketTransform::new(cfg.seed.derive("rocket"), cfg.rocket_kernels, cfg.kernel_sharing)?;
                let width = N_STREAMS * rocket.features_per_stream();
                let rows = windows
                    .par_iter()
                    .map(|w| Ok(rocket.features(w)?.flatten().into_iter().map(|v| v as f32).collect()))
                    .collect::<Result<Vec<_>>>()?;
                let m = rows_to_matrix(rows, width);
                if width != SENSING_WIDTH {
                    return Err(Error::invalid(
                        "rocket",
                        format!("{} kernels give {width} features; {SENSING_WIDTH} are required", cfg.rocket_kernels),
                    ));
                }
                blocks.insert(FeatureBlock::SensingRocket, m);
            }
        }
    }
    Ok(FeatureSet {
        cohort_digest: cohort_digest(&instances),
        config_digest: cfg.digest(),
        instances,
        blocks,
    })
}

/// Rows `idx` of the horizontal concatenation of `blocks`.
pub fn assemble(features: &FeatureSet, blocks: &[FeatureBlock], idx: &[usize]) -> Result<Array2<f32>> {
    let width: usize = blocks.iter().map(|b| b.width()).sum();
    let mut out = Array2::zeros((idx.len(), width));
    let mut col = 0;
    for &b in blocks {
        let m = features.block(b)?;
        for (r, &i) in idx.iter().enumerate() {
            out.slice_mut(s![r, col..col + b.width()]).assign(&m.row(i));
        }
        col += b.width();
    }
    Ok(out)
}

/// Embedder weights from a file, or seeded random weights.
pub fn embedder_weights(cfg: &EmbedderConfig, path: Option<&Path>) -> Result<EmbedderWeights> {
    match path {
        Some(p) => crate::embedder::load_weight_archive(p, cfg),
        None => EmbedderWeights::random_init(cfg),
    }
}
