//! Cohort data model: participants, passive sensing events, EMA responses and
//! diary token stacks.

mod io;
mod logs;
pub mod synth;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Timestamp;

pub use io::{load_cohort, load_diaries, save_cohort, save_diaries, COHORT_FILES};
pub use logs::{parse_ema_log, parse_sensing_log, write_ema_log, write_sensing_log};
pub use synth::{generate_synthetic_cohort, synthetic_diary_audio, SynthConfig};

/// Number of encoder layers per token.
pub const TOKEN_LAYERS: usize = 12;
/// Width of one encoder layer output.
pub const TOKEN_WIDTH: usize = 768;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParticipantId(Arc<str>);

impl ParticipantId {
    pub fn new(id: &str) -> Result<Self> {
        if id.is_empty() || id.contains([',', '\n', '\r']) || id.trim() != id {
            return Err(Error::invalid("participant id", format!("`{id}`")));
        }
        Ok(ParticipantId(Arc::from(id)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for ParticipantId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ParticipantId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ParticipantId::new(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: ParticipantId,
    /// Local time minus UTC, in minutes.
    pub timezone_offset: i32,
}

impl Participant {
    pub fn new(id: ParticipantId, timezone_offset: i32) -> Result<Self> {
        if !(-720..=840).contains(&timezone_offset) {
            return Err(Error::invalid(
                "timezone offset",
                format!("{timezone_offset} min for {id} is outside [-720, 840]"),
            ));
        }
        Ok(Participant { id, timezone_offset })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SensingKind {
    Gps,
    ScreenUnlock,
    ScreenLock,
    AudioAmplitude,
    Conversation,
}

impl SensingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SensingKind::Gps => "gps",
            SensingKind::ScreenUnlock => "screen_unlock",
            SensingKind::ScreenLock => "screen_lock",
            SensingKind::AudioAmplitude => "audio_amplitude",
            SensingKind::Conversation => "conversation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "gps" => SensingKind::Gps,
            "screen_unlock" => SensingKind::ScreenUnlock,
            "screen_lock" => SensingKind::ScreenLock,
            "audio_amplitude" => SensingKind::AudioAmplitude,
            "conversation" => SensingKind::Conversation,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensingPayload {
    Gps { lat: f64, lon: f64 },
    ScreenUnlock,
    ScreenLock,
    AudioAmplitude(f64),
    /// Conversation starting at the event timestamp.
    Conversation { duration_s: f64 },
}

impl SensingPayload {
    pub fn kind(&self) -> SensingKind {
        match self {
            SensingPayload::Gps { .. } => SensingKind::Gps,
            SensingPayload::ScreenUnlock => SensingKind::ScreenUnlock,
            SensingPayload::ScreenLock => SensingKind::ScreenLock,
            SensingPayload::AudioAmplitude(_) => SensingKind::AudioAmplitude,
            SensingPayload::Conversation { .. } => SensingKind::Conversation,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            SensingPayload::Gps { lat, lon } => {
                if !(lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
                    return Err(format!("latitude {lat} outside [-90, 90]"));
                }
                if !(lon.is_finite() && (-180.0..=180.0).contains(&lon)) {
                    return Err(format!("longitude {lon} outside [-180, 180]"));
                }
            }
            SensingPayload::AudioAmplitude(a) => {
                if !(a.is_finite() && a >= 0.0) {
                    return Err(format!("audio amplitude {a} must be finite and >= 0"));
                }
            }
            SensingPayload::Conversation { duration_s } => {
                if !(duration_s.is_finite() && duration_s >= 0.0) {
                    return Err(format!("conversation duration {duration_s} must be finite and >= 0"));
                }
            }
            SensingPayload::ScreenUnlock | SensingPayload::ScreenLock => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingEvent {
    pub participant_id: ParticipantId,
    pub timestamp: Timestamp,
    pub payload: SensingPayload,
}

/// A 4-point answer: 0 "Not at all", 1 "A little", 2 "Moderately"/"Moderate",
/// 3 "Extremely"/"A lot".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Ordinal(u8);

impl Ordinal {
    pub const COUNT: usize = 4;

    pub fn new(v: u8) -> Result<Self> {
        if v as usize >= Self::COUNT {
            return Err(Error::invalid("ordinal", format!("{v} is outside 0..=3")));
        }
        Ok(Ordinal(v))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn label(self, question: Question) -> &'static str {
        match (self.0, question) {
            (0, _) => "Not at all",
            (1, _) => "A little",
            (2, Question::Negativeness | Question::Loudness) => "Moderately",
            (2, _) => "Moderate",
            (_, Question::Negativeness | Question::Loudness) => "Extremely",
            _ => "A lot",
        }
    }
}

impl TryFrom<u8> for Ordinal {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Ordinal::new(v)
    }
}

impl From<Ordinal> for u8 {
    fn from(o: Ordinal) -> u8 {
        o.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Question {
    Negativeness,
    Loudness,
    Control,
    Power,
}

impl Question {
    pub const ALL: [Question; 4] = [
        Question::Negativeness,
        Question::Loudness,
        Question::Control,
        Question::Power,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Question::Negativeness => "negativeness",
            Question::Loudness => "loudness",
            Question::Control => "control",
            Question::Power => "power",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Question::ALL.into_iter().find(|q| q.as_str() == s)
    }
}

impl fmt::Display for Question {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValenceAnswers {
    pub negativeness: Ordinal,
    pub loudness: Ordinal,
    pub control: Ordinal,
    pub power: Ordinal,
}

impl ValenceAnswers {
    pub fn get(&self, q: Question) -> Ordinal {
        match q {
            Question::Negativeness => self.negativeness,
            Question::Loudness => self.loudness,
            Question::Control => self.control,
            Question::Power => self.power,
        }
    }

    /// From `[negativeness, loudness, control, power]`.
    pub fn from_array(v: [u8; 4]) -> Result<Self> {
        Ok(ValenceAnswers {
            negativeness: Ordinal::new(v[0])?,
            loudness: Ordinal::new(v[1])?,
            control: Ordinal::new(v[2])?,
            power: Ordinal::new(v[3])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaResponse {
    pub participant_id: ParticipantId,
    pub timestamp: Timestamp,
    pub hearing: bool,
    answers: Option<ValenceAnswers>,
    /// Opened manually rather than from the scheduled prompt.
    pub self_initiated: bool,
}

impl EmaResponse {
    /// Enforces the gate: answers exist exactly when voices are being heard.
    pub fn new(
        participant_id: ParticipantId,
        timestamp: Timestamp,
        hearing: bool,
        answers: Option<ValenceAnswers>,
        self_initiated: bool,
    ) -> Result<Self> {
        match (hearing, answers.is_some()) {
            (false, true) => {
                return Err(Error::invalid(
                    "EMA response",
                    "hearing=0 closes the questionnaire, so no answers may follow",
                ))
            }
            (true, false) => return Err(Error::invalid("EMA response", "hearing=1 requires all four answers")),
            _ => {}
        }
        Ok(EmaResponse {
            participant_id,
            timestamp,
            hearing,
            answers,
            self_initiated,
        })
    }

    pub fn answers(&self) -> Option<&ValenceAnswers> {
        self.answers.as_ref()
    }
}

/// The 12 encoder layer outputs of one token, layer-major (`12 × 768`).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLayers(Arc<[f32]>);

impl TokenLayers {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != TOKEN_LAYERS * TOKEN_WIDTH {
            return Err(Error::Shape {
                name: "token layers".into(),
                expected: vec![TOKEN_LAYERS, TOKEN_WIDTH],
                actual: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("token layers", "non-finite value"));
        }
        Ok(TokenLayers(values.into()))
    }

    pub fn layer(&self, i: usize) -> &[f32] {
        &self.0[i * TOKEN_WIDTH..(i + 1) * TOKEN_WIDTH]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn ptr_eq(&self, other: &TokenLayers) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub text: Arc<str>,
    pub layers: TokenLayers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiaryTokenStack {
    pub participant_id: ParticipantId,
    pub ema_timestamp: Timestamp,
    pub sentences: Vec<Vec<Token>>,
}

impl DiaryTokenStack {
    pub fn n_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Cohort {
    pub participants: Vec<Participant>,
    pub events: Vec<SensingEvent>,
    pub ema: Vec<EmaResponse>,
    pub diaries: Vec<DiaryTokenStack>,
}

impl Cohort {
    /// Builds a cohort after checking referential integrity.
    pub fn new(
        participants: Vec<Participant>,
        events: Vec<SensingEvent>,
        ema: Vec<EmaResponse>,
        diaries: Vec<DiaryTokenStack>,
    ) -> Result<Self> {
        let cohort = Cohort {
            participants,
            events,
            ema,
            diaries,
        };
        cohort.validate()?;
        Ok(cohort)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for p in &self.participants {
            if !ids.insert(&p.id) {
                return Err(Error::invalid("cohort", format!("duplicate participant {}", p.id)));
            }
        }
        let dangling = |what: &str, id: &ParticipantId, idx: usize, ts: Timestamp| {
            Error::invalid(
                "cohort",
                format!("{what} #{idx} at {ts} references unknown participant {id}"),
            )
        };
        for (i, e) in self.events.iter().enumerate() {
            if !ids.contains(&e.participant_id) {
                return Err(dangling("sensing event", &e.participant_id, i, e.timestamp));
            }
        }
        let mut ema_keys = HashSet::new();
        for (i, r) in self.ema.iter().enumerate() {
            if !ids.contains(&r.participant_id) {
                return Err(dangling("EMA response", &r.participant_id, i, r.timestamp));
            }
            if !ema_keys.insert((&r.participant_id, r.timestamp)) {
                return Err(Error::invalid(
                    "cohort",
                    format!("duplicate EMA response #{i} for {} at {}", r.participant_id, r.timestamp),
                ));
            }
        }
        let mut diary_keys = HashSet::new();
        for (i, d) in self.diaries.iter().enumerate() {
            if !ids.contains(&d.participant_id) {
                return Err(dangling("diary", &d.participant_id, i, d.ema_timestamp));
            }
            if !ema_keys.contains(&(&d.participant_id, d.ema_timestamp)) {
                return Err(Error::invalid(
                    "cohort",
                    format!(
                        "diary #{i} for {} at {} has no matching EMA response",
                        d.participant_id, d.ema_timestamp
                    ),
                ));
            }
            if !diary_keys.insert((&d.participant_id, d.ema_timestamp)) {
                return Err(Error::invalid(
                    "cohort",
                    format!("second diary for {} at {}", d.participant_id, d.ema_timestamp),
                ));
            }
        }
        Ok(())
    }

    /// Sensing events grouped per participant, each group sorted by time.
    pub fn events_by_participant(&self) -> HashMap<ParticipantId, Vec<&SensingEvent>> {
        let mut map: HashMap<ParticipantId, Vec<&SensingEvent>> = HashMap::new();
        for e in &self.events {
            map.entry(e.participant_id.clone()).or_default().push(e);
        }
        for v in map.values_mut() {
            v.sort_by_key(|e| e.timestamp);
        }
        map
    }

    pub fn diary(&self, participant: &ParticipantId, ema_timestamp: Timestamp) -> Option<&DiaryTokenStack> {
        self.diaries
            .iter()
            .find(|d| &d.participant_id == participant && d.ema_timestamp == ema_timestamp)
    }

    pub fn diary_index(&self) -> HashMap<(ParticipantId, Timestamp), &DiaryTokenStack> {
        self.diaries
            .iter()
            .map(|d| ((d.participant_id.clone(), d.ema_timestamp), d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pid(s: &str) -> ParticipantId {
        ParticipantId::new(s).unwrap()
    }

    fn answers() -> ValenceAnswers {
        let o = |v| Ordinal::new(v).unwrap();
        ValenceAnswers {
            negativeness: o(3),
            loudness: o(3),
            control: o(1),
            power: o(3),
        }
    }

    #[test]
    fn gate_invariant_is_enforced() {
        let t = Timestamp::from_secs(0);
        assert!(EmaResponse::new(pid("a"), t, false, Some(answers()), false).is_err());
        assert!(EmaResponse::new(pid("a"), t, true, None, false).is_err());
        assert!(EmaResponse::new(pid("a"), t, false, None, false).is_ok());
        assert!(EmaResponse::new(pid("a"), t, true, Some(answers()), false).is_ok());
    }

    #[test]
    fn ordinal_labels_share_encoding_across_scales() {
        let o = Ordinal::new(2).unwrap();
        assert_eq!(o.label(Question::Loudness), "Moderately");
        assert_eq!(o.label(Question::Power), "Moderate");
        assert_eq!(Ordinal::new(3).unwrap().label(Question::Control), "A lot");
        assert!(Ordinal::new(4).is_err());
    }

    #[test]
    fn timezone_range() {
        assert!(Participant::new(pid("a"), 840).is_ok());
        assert!(Participant::new(pid("a"), -721).is_err());
    }

    #[test]
    fn dangling_references_name_the_record() {
        let p = Participant::new(pid("p1"), 0).unwrap();
        let ev = SensingEvent {
            participant_id: pid("ghost"),
            timestamp: Timestamp::from_secs(60),
            payload: SensingPayload::ScreenLock,
        };
        let err = Cohort::new(vec![p], vec![ev], vec![], vec![]).unwrap_err().to_string();
        assert!(err.contains("sensing event #0"), "{err}");
        assert!(err.contains("ghost"), "{err}");
    }

    #[test]
    fn duplicate_diaries_are_rejected() {
        let p = Participant::new(pid("p1"), 0).unwrap();
        let t = Timestamp::from_secs(100);
        let r = EmaResponse::new(pid("p1"), t, true, Some(answers()), false).unwrap();
        let d = DiaryTokenStack {
            participant_id: pid("p1"),
            ema_timestamp: t,
            sentences: vec![],
        };
        assert!(Cohort::new(vec![p.clone()], vec![], vec![r.clone()], vec![d.clone()]).is_ok());
        assert!(Cohort::new(vec![p], vec![], vec![r], vec![d.clone(), d]).is_err());
    }
}
