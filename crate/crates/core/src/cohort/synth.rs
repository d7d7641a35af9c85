//! Seeded synthetic cohorts with a planted, learnable signal.
//!
//! Each participant has a home, a handful of other places and a hidden trait.
//! A daily activity level (AR(1) around the trait) drives outings, phone use,
//! ambient amplitude and conversations. EMA prompts fall inside the four local
//! windows 9–11, 12–14, 15–17 and 18–20. A response that reports voices gets a
//! diary whose tokens mix a neutral vocabulary with "harsh" and "calm" motif
//! words, and four ordinal answers obtained by quantizing
//!
//! ```text
//! z_q = a_q · intensity + b_q · motif + c · trait + noise
//! ```
//!
//! per question at fixed cohort-wide proportions. `intensity` is measured on the
//! events of the 24 hours before the prompt and `motif` on the diary tokens,
//! both standardized over the cohort.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    Cohort, DiaryTokenStack, EmaResponse, Ordinal, Participant, ParticipantId, SensingEvent, SensingPayload,
    ValenceAnswers,
};
use crate::error::{Error, Result};
use crate::mobility::haversine_deg;
use crate::seed::Seed;
use crate::sonify::Waveform;
use crate::text::StubEncoder;
use crate::time::{Timestamp, MS_PER_DAY, MS_PER_HOUR, MS_PER_MINUTE, MS_PER_SECOND};

/// Local-time EMA windows as `[start, end)` hours.
pub const EMA_WINDOWS: [(i64, i64); 4] = [(9, 11), (12, 14), (15, 17), (18, 20)];

/// Target ordinal proportions per question (negativeness, loudness, control, power).
pub const LABEL_PROPORTIONS: [[f64; 4]; 4] = [
    [0.21, 0.24, 0.26, 0.29],
    [0.38, 0.27, 0.21, 0.14],
    [0.14, 0.19, 0.26, 0.41],
    [0.28, 0.26, 0.24, 0.22],
];

/// `(intensity, motif)` weights per question.
const LABEL_WEIGHTS: [(f64, f64); 4] = [(1.0, 1.0), (1.1, 0.8), (-0.9, -1.0), (0.8, 1.1)];
const TRAIT_WEIGHT: f64 = 0.3;

const TIMEZONES: [i32; 8] = [-480, -420, -360, -300, 0, 60, 120, 330];

const NEUTRAL_WORDS: [&str; 48] = [
    "today", "voice", "said", "again", "morning", "room", "talking", "about", "the", "was", "it", "and", "then",
    "i", "heard", "something", "while", "walking", "kitchen", "phone", "window", "street", "after", "lunch",
    "evening", "they", "were", "name", "my", "sister", "work", "bus", "outside", "inside", "late", "early",
    "thinking", "coffee", "tv", "music", "door", "night", "sleep", "tired", "shop", "car", "friend", "home",
];
const HARSH_WORDS: [&str; 6] = ["shouting", "angry", "mocking", "threat", "cruel", "yelling"];
const CALM_WORDS: [&str; 6] = ["calm", "kind", "gentle", "quiet", "friendly", "soft"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_participants: usize,
    pub n_days: usize,
    pub seed: Seed,
    /// Probability that a scheduled prompt is answered.
    pub compliance: f64,
    /// Mean probability that an answered prompt reports voices.
    pub hearing_rate: f64,
    pub self_initiated_rate: f64,
    pub gps_interval_min: i64,
    pub amplitude_interval_min: i64,
    pub label_noise: f64,
    pub start: Timestamp,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_participants: 40,
            n_days: 30,
            seed: Seed(7),
            compliance: 0.6,
            hearing_rate: 0.4,
            self_initiated_rate: 0.05,
            gps_interval_min: 10,
            amplitude_interval_min: 1,
            label_noise: 0.35,
            start: Timestamp::parse_rfc3339("2021-03-01T00:00:00Z").expect("valid literal"),
        }
    }
}

impl SynthConfig {
    pub fn new(n_participants: usize, n_days: usize, seed: Seed) -> Self {
        SynthConfig {
            n_participants,
            n_days,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_participants == 0 || self.n_days == 0 {
            return Err(Error::invalid("synth config", "needs at least one participant and one day"));
        }
        for (what, p) in [
            ("compliance", self.compliance),
            ("hearing rate", self.hearing_rate),
            ("self-initiated rate", self.self_initiated_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(what, format!("{p} is not a probability")));
            }
        }
        if self.gps_interval_min < 1 || self.amplitude_interval_min < 1 {
            return Err(Error::invalid("synth config", "sampling intervals must be at least one minute"));
        }
        if !(self.label_noise >= 0.0 && self.label_noise.is_finite()) {
            return Err(Error::invalid("label noise", format!("{}", self.label_noise)));
        }
        Ok(())
    }
}

struct Place {
    lat: f64,
    lon: f64,
}

struct Profile {
    id: ParticipantId,
    offset_min: i32,
    trait_: f64,
    home: Place,
    places: Vec<Place>,
    amp_base: f64,
    hearing_p: f64,
}

#[derive(Clone, Copy)]
struct Outing {
    place: usize,
    leave: i64,
    arrive: i64,
    depart: i64,
    back: i64,
}

/// Prompt that reported voices, before labels are assigned.
struct Pending {
    participant: usize,
    timestamp: Timestamp,
    sentences: Vec<Vec<&'static str>>,
    motif: f64,
}

fn offset_deg(lat: f64, north_m: f64, east_m: f64) -> (f64, f64) {
    let dlat = north_m / 111_195.0;
    let dlon = east_m / (111_195.0 * lat.to_radians().cos());
    (dlat, dlon)
}

fn diurnal(hour: i64) -> f64 {
    match hour {
        0..=6 => 0.08,
        7 => 0.5,
        8..=21 => 1.0,
        22 => 0.6,
        _ => 0.25,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generates a cohort that is a pure function of `cfg`.
pub fn generate_synthetic_cohort(cfg: &SynthConfig) -> Result<Cohort> {
    cfg.validate()?;
    let master = cfg.seed;
    let mut participants = Vec::with_capacity(cfg.n_participants);
    let mut profiles = Vec::with_capacity(cfg.n_participants);
    for i in 0..cfg.n_participants {
        let mut rng = master.derive_with("synth-profile", &[&(i as u64).to_le_bytes()]).rng();
        let id = ParticipantId::new(&format!("p{:03}", i + 1))?;
        let offset_min = TIMEZONES[rng.random_range(0..TIMEZONES.len())];
        let home = Place {
            lat: 40.0 + rng.random_range(-0.5..0.5),
            lon: -75.0 + rng.random_range(-0.5..0.5),
        };
        let places = (0..rng.random_range(3..=5))
            .map(|_| {
                let dist = rng.random_range(800.0..8000.0);
                let bearing: f64 = rng.random_range(0.0..2.0 * PI);
                let (dlat, dlon) = offset_deg(home.lat, dist * bearing.cos(), dist * bearing.sin());
                Place {
                    lat: home.lat + dlat,
                    lon: home.lon + dlon,
                }
            })
            .collect();
        let trait_: f64 = StandardNormal.sample(&mut rng);
        let amp_base = 200.0 * (0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).exp();
        let hearing_p = (cfg.hearing_rate * (0.5 * trait_).exp()).clamp(0.0, 1.0);
        participants.push(Participant::new(id.clone(), offset_min)?);
        profiles.push(Profile {
            id,
            offset_min,
            trait_,
            home,
            places,
            amp_base,
            hearing_p,
        });
    }

    let mut events = Vec::new();
    let mut answered: Vec<(usize, Timestamp, bool, bool)> = Vec::new();
    let mut pending = Vec::new();
    for (pi, prof) in profiles.iter().enumerate() {
        let mut rng = master.derive_with("synth-days", &[&(pi as u64).to_le_bytes()]).rng();
        let mut activity = 0.0f64;
        let mut own = Vec::new();
        // day -1 only provides history for the first prompts
        for day in -1..cfg.n_days as i64 {
            let innov: f64 = StandardNormal.sample(&mut rng);
            activity = 0.5 * activity + 0.85 * innov;
            let level = activity + 0.3 * prof.trait_;
            let midnight = cfg.start.millis() + day * MS_PER_DAY - prof.offset_min as i64 * MS_PER_MINUTE;
            simulate_day(prof, midnight, level, cfg, &mut rng, &mut own);
            if day < 0 {
                continue;
            }
            for &(lo, hi) in &EMA_WINDOWS {
                let at = midnight + rng.random_range(lo * MS_PER_HOUR / MS_PER_SECOND..hi * MS_PER_HOUR / MS_PER_SECOND) * MS_PER_SECOND;
                let responds = rng.random_bool(cfg.compliance);
                let self_initiated = rng.random_bool(cfg.self_initiated_rate);
                if !responds {
                    continue;
                }
                let hearing = rng.random_bool(prof.hearing_p);
                answered.push((pi, Timestamp::from_millis(at), hearing, self_initiated));
                if hearing {
                    let (sentences, motif) = diary_tokens(&mut rng);
                    pending.push(Pending {
                        participant: pi,
                        timestamp: Timestamp::from_millis(at),
                        sentences,
                        motif,
                    });
                }
            }
        }
        own.sort_by_key(|e: &SensingEvent| e.timestamp);
        events.extend(own);
    }

    let by_participant = split_by_participant(&events, &profiles);
    let intensity: Vec<f64> = pending
        .iter()
        .map(|p| sensing_intensity(&profiles[p.participant], by_participant[p.participant], p.timestamp))
        .collect();
    let intensity = standardize(&intensity);
    let motif = standardize(&pending.iter().map(|p| p.motif).collect::<Vec<_>>());
    let mut label_rng = master.derive("synth-labels").rng();
    let mut ordinals = vec![[0u8; 4]; pending.len()];
    for (q, &(a, b)) in LABEL_WEIGHTS.iter().enumerate() {
        let z: Vec<f64> = pending
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let noise: f64 = StandardNormal.sample(&mut label_rng);
                a * intensity[i] + b * motif[i] + TRAIT_WEIGHT * profiles[p.participant].trait_ + cfg.label_noise * noise
            })
            .collect();
        for (i, o) in quantize(&z, &LABEL_PROPORTIONS[q]).into_iter().enumerate() {
            ordinals[i][q] = o;
        }
    }

    let mut encoder = StubEncoder::new(master.derive("stub-encoder"));
    let mut labels = std::collections::HashMap::new();
    let mut diaries = Vec::with_capacity(pending.len());
    for (p, o) in pending.iter().zip(&ordinals) {
        let pid = profiles[p.participant].id.clone();
        labels.insert((p.participant, p.timestamp), *o);
        diaries.push(DiaryTokenStack {
            participant_id: pid,
            ema_timestamp: p.timestamp,
            sentences: encoder.encode(&p.sentences)?,
        });
    }
    let mut ema = Vec::with_capacity(answered.len());
    for (pi, ts, hearing, self_initiated) in answered {
        let answers = match labels.get(&(pi, ts)) {
            Some(o) => Some(ValenceAnswers {
                negativeness: Ordinal::new(o[0])?,
                loudness: Ordinal::new(o[1])?,
                control: Ordinal::new(o[2])?,
                power: Ordinal::new(o[3])?,
            }),
            None => None,
        };
        ema.push(EmaResponse::new(profiles[pi].id.clone(), ts, hearing, answers, self_initiated)?);
    }
    Cohort::new(participants, events, ema, diaries)
}

fn simulate_day(prof: &Profile, midnight: i64, level: f64, cfg: &SynthConfig, rng: &mut ChaCha8Rng, out: &mut Vec<SensingEvent>) {
    let pid = &prof.id;
    let push = |out: &mut Vec<SensingEvent>, t: i64, payload| {
        out.push(SensingEvent {
            participant_id: pid.clone(),
            timestamp: Timestamp::from_millis(t),
            payload,
        })
    };
    let minute = |m: f64| midnight + (m * MS_PER_MINUTE as f64) as i64;

    // outings, in minutes after local midnight
    let n_out = Poisson::new((0.7 * level - 0.1).exp()).unwrap().sample(rng).min(3.0) as usize;
    let mut outings = Vec::new();
    let mut cursor = rng.random_range(7.5 * 60.0..11.0 * 60.0);
    for _ in 0..n_out {
        let place = rng.random_range(0..prof.places.len());
        let p = &prof.places[place];
        let dist = haversine_deg(prof.home.lat, prof.home.lon, p.lat, p.lon);
        let travel = dist / 400.0 + 5.0;
        let stay = rng.random_range(50.0..180.0);
        if cursor + 2.0 * travel + stay > 22.0 * 60.0 {
            break;
        }
        outings.push(Outing {
            place,
            leave: minute(cursor),
            arrive: minute(cursor + travel),
            depart: minute(cursor + travel + stay),
            back: minute(cursor + 2.0 * travel + stay),
        });
        cursor += 2.0 * travel + stay + rng.random_range(30.0..120.0);
    }
    let away = |t: i64| outings.iter().any(|o| t >= o.leave && t < o.back);

    let jitter = Normal::new(0.0, 12.0).unwrap();
    let gps_step = cfg.gps_interval_min * MS_PER_MINUTE;
    let mut t = midnight + rng.random_range(0..gps_step / MS_PER_SECOND) * MS_PER_SECOND;
    while t < midnight + MS_PER_DAY {
        let (lat, lon) = position(prof, &outings, t);
        let (dlat, dlon) = offset_deg(lat, jitter.sample(rng), jitter.sample(rng));
        push(out, t, SensingPayload::Gps { lat: lat + dlat, lon: lon + dlon });
        t += gps_step;
    }

    let mut conversations: Vec<(i64, i64)> = Vec::new();
    for hour in 0..24i64 {
        let h0 = midnight + hour * MS_PER_HOUR;
        let boost = if away(h0 + MS_PER_HOUR / 2) { 2.0 } else { 1.0 };
        let rate = 0.25 * (0.9 * level).exp() * diurnal(hour) * boost;
        let n = Poisson::new(rate).unwrap().sample(rng) as usize;
        for _ in 0..n {
            let start = h0 + rng.random_range(0..MS_PER_HOUR / MS_PER_SECOND) * MS_PER_SECOND;
            let dur: f64 = Exp::new(1.0 / 240.0).unwrap().sample(rng);
            let dur = dur.min(3600.0).round();
            conversations.push((start, start + dur as i64 * MS_PER_SECOND));
            push(out, start, SensingPayload::Conversation { duration_s: dur });
        }
    }

    let mut unlocks: Vec<i64> = Vec::new();
    for hour in 0..24i64 {
        let rate = 3.0 * (0.5 * level).exp() * diurnal(hour);
        let n = Poisson::new(rate).unwrap().sample(rng) as usize;
        let h0 = midnight + hour * MS_PER_HOUR;
        unlocks.extend((0..n).map(|_| h0 + rng.random_range(0..MS_PER_HOUR / MS_PER_SECOND) * MS_PER_SECOND));
    }
    unlocks.sort_unstable();
    unlocks.dedup();
    let session = Exp::new(1.0 / (90.0 * (0.3 * level).exp())).unwrap();
    for (k, &u) in unlocks.iter().enumerate() {
        push(out, u, SensingPayload::ScreenUnlock);
        let len = (session.sample(rng).max(1.0) as i64) * MS_PER_SECOND;
        let limit = unlocks.get(k + 1).copied().unwrap_or(midnight + MS_PER_DAY);
        if u + len < limit {
            push(out, u + len, SensingPayload::ScreenLock);
        }
    }

    let amp_noise = Normal::new(0.0, 0.3).unwrap();
    let amp_step = cfg.amplitude_interval_min * MS_PER_MINUTE;
    let scale = prof.amp_base * (0.3 * level).exp();
    let mut t = midnight;
    while t < midnight + MS_PER_DAY {
        let hour = (t - midnight) / MS_PER_HOUR;
        let noise: f64 = amp_noise.sample(rng);
        let mut a = scale * (0.2 + diurnal(hour)) * noise.exp();
        if away(t) {
            a += 400.0;
        }
        if conversations.iter().any(|&(s, e)| t >= s && t < e) {
            a += 1500.0;
        }
        push(out, t, SensingPayload::AudioAmplitude(a.round()));
        t += amp_step;
    }
}

fn position(prof: &Profile, outings: &[Outing], t: i64) -> (f64, f64) {
    let home = (prof.home.lat, prof.home.lon);
    for o in outings {
        let p = &prof.places[o.place];
        let dest = (p.lat, p.lon);
        let lerp = |a: (f64, f64), b: (f64, f64), f: f64| (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f);
        if t >= o.leave && t < o.arrive {
            return lerp(home, dest, (t - o.leave) as f64 / (o.arrive - o.leave) as f64);
        }
        if t >= o.arrive && t < o.depart {
            return dest;
        }
        if t >= o.depart && t < o.back {
            return lerp(dest, home, (t - o.depart) as f64 / (o.back - o.depart) as f64);
        }
    }
    home
}

/// Sentences of tokens plus the observed motif balance `(harsh - calm) / tokens`.
fn diary_tokens(rng: &mut ChaCha8Rng) -> (Vec<Vec<&'static str>>, f64) {
    let latent: f64 = StandardNormal.sample(rng);
    let p_harsh = 0.35 * sigmoid(1.5 * latent);
    let p_calm = 0.35 * sigmoid(-1.5 * latent);
    let (mut harsh, mut calm, mut total) = (0usize, 0usize, 0usize);
    let sentences = (0..rng.random_range(2..=4))
        .map(|_| {
            (0..rng.random_range(4..=8))
                .map(|_| {
                    total += 1;
                    let u: f64 = rng.random();
                    if u < p_harsh {
                        harsh += 1;
                        HARSH_WORDS[rng.random_range(0..HARSH_WORDS.len())]
                    } else if u < p_harsh + p_calm {
                        calm += 1;
                        CALM_WORDS[rng.random_range(0..CALM_WORDS.len())]
                    } else {
                        NEUTRAL_WORDS[rng.random_range(0..NEUTRAL_WORDS.len())]
                    }
                })
                .collect()
        })
        .collect();
    (sentences, (harsh as f64 - calm as f64) / total as f64)
}

fn split_by_participant<'a>(events: &'a [SensingEvent], profiles: &[Profile]) -> Vec<&'a [SensingEvent]> {
    // events were appended participant by participant
    let mut out = Vec::with_capacity(profiles.len());
    let mut start = 0;
    for p in profiles {
        let len = events[start..].iter().take_while(|e| e.participant_id == p.id).count();
        out.push(&events[start..start + len]);
        start += len;
    }
    out
}

/// `ln(1+unlocks) + ln(1+conversations) + ln(1+fixes away from home)` over the
/// 24 hours before `at`.
fn sensing_intensity(prof: &Profile, events: &[SensingEvent], at: Timestamp) -> f64 {
    let from = at - 24 * MS_PER_HOUR;
    let lo = events.partition_point(|e| e.timestamp < from);
    let hi = events.partition_point(|e| e.timestamp < at);
    let (mut unlocks, mut convs, mut away) = (0usize, 0usize, 0usize);
    for e in &events[lo..hi] {
        match e.payload {
            SensingPayload::ScreenUnlock => unlocks += 1,
            SensingPayload::Conversation { .. } => convs += 1,
            SensingPayload::Gps { lat, lon } if haversine_deg(lat, lon, prof.home.lat, prof.home.lon) > 200.0 => away += 1,
            _ => {}
        }
    }
    (1.0 + unlocks as f64).ln() + (1.0 + convs as f64).ln() + (1.0 + away as f64).ln()
}

fn standardize(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    v.iter().map(|x| if sd > 0.0 { (x - mean) / sd } else { 0.0 }).collect()
}

/// Ordinal by rank: the lowest `p[0]` share of scores gets 0, and so on.
fn quantize(z: &[f64], proportions: &[f64; 4]) -> Vec<u8> {
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    let n = z.len() as f64;
    let mut cuts = [0usize; 3];
    let mut acc = 0.0;
    for (c, p) in cuts.iter_mut().zip(proportions) {
        acc += p;
        *c = (acc * n).round() as usize;
    }
    let mut out = vec![0u8; z.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = cuts.iter().filter(|&&c| rank >= c).count() as u8;
    }
    out
}

/// Renders a diary as 16 kHz audio: a 0.25 s tone per token whose pitch
/// depends on the token text (see [`token_pitch`]), 0.1 s of silence between
/// sentences, at least 1 s long.
pub fn synthetic_diary_audio(diary: &DiaryTokenStack) -> Waveform {
    const RATE: usize = 16_000;
    const TONE: usize = RATE / 4;
    const GAP: usize = RATE / 10;
    const FADE: usize = RATE / 100;
    let mut samples = Vec::new();
    for (s, sentence) in diary.sentences.iter().enumerate() {
        if s > 0 {
            samples.extend(std::iter::repeat_n(0.0f32, GAP));
        }
        for tok in sentence {
            let freq = token_pitch(&tok.text);
            samples.extend((0..TONE).map(|k| {
                let env = (k.min(TONE - 1 - k) as f64 / FADE as f64).min(1.0);
                (0.3 * env * (2.0 * PI * freq * k as f64 / RATE as f64).sin()) as f32
            }));
        }
    }
    if samples.len() < RATE {
        samples.resize(RATE, 0.0);
    }
    Waveform {
        samples,
        sample_rate_hz: RATE as u32,
    }
}

/// Log-uniform in the token digest within a register: calm motif words sit
/// in 150–300 Hz, neutral words in 300–1200 Hz and harsh motif words in
/// 1.2–3.4 kHz.
fn token_pitch(text: &str) -> f64 {
    let digest = Sha256::digest(text.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    let u = u64::from_le_bytes(b) as f64 / u64::MAX as f64;
    let (lo, hi): (f64, f64) = if HARSH_WORDS.contains(&text) {
        (1200.0, 3400.0)
    } else if CALM_WORDS.contains(&text) {
        (150.0, 300.0)
    } else {
        (300.0, 1200.0)
    };
    lo * (hi / lo).powf(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{write_ema_log, write_sensing_log, Question};

    fn small() -> SynthConfig {
        SynthConfig {
            amplitude_interval_min: 15,
            ..SynthConfig::new(4, 3, Seed(11))
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_synthetic_cohort(&small()).unwrap();
        let b = generate_synthetic_cohort(&small()).unwrap();
        let dump = |c: &Cohort| {
            let mut s = Vec::new();
            write_sensing_log(&mut s, &c.events).unwrap();
            write_ema_log(&mut s, &c.ema).unwrap();
            s
        };
        assert_eq!(dump(&a), dump(&b));
        assert_eq!(a.diaries, b.diaries);
        let c = generate_synthetic_cohort(&SynthConfig {
            seed: Seed(12),
            ..small()
        })
        .unwrap();
        assert_ne!(dump(&a), dump(&c));
    }

    #[test]
    fn prompts_fall_inside_local_windows() {
        let cfg = SynthConfig::new(40, 30, Seed(7));
        let c = generate_synthetic_cohort(&cfg).unwrap();
        let offsets: std::collections::HashMap<_, _> =
            c.participants.iter().map(|p| (p.id.clone(), p.timezone_offset as i64)).collect();
        assert!(!c.ema.is_empty());
        for r in &c.ema {
            let local = r.timestamp.millis() + offsets[&r.participant_id] * MS_PER_MINUTE;
            let of_day = local.rem_euclid(MS_PER_DAY);
            assert!(
                EMA_WINDOWS
                    .iter()
                    .any(|&(lo, hi)| of_day >= lo * MS_PER_HOUR && of_day < hi * MS_PER_HOUR),
                "{} at local {}h",
                r.participant_id,
                of_day as f64 / MS_PER_HOUR as f64
            );
        }
        let labeled: Vec<_> = c.ema.iter().filter_map(|r| r.answers()).collect();
        assert_eq!(labeled.len(), c.diaries.len());
        for q in Question::ALL {
            let mut counts = [0usize; 4];
            for a in &labeled {
                counts[a.get(q).index()] += 1;
            }
            let prevalence = *counts.iter().max().unwrap() as f64 / labeled.len() as f64;
            assert!(prevalence > 0.25 && prevalence < 0.6, "{q}: {prevalence}");
        }
    }

    #[test]
    fn quantize_hits_proportions() {
        let z: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let o = quantize(&z, &[0.1, 0.2, 0.3, 0.4]);
        let mut counts = [0; 4];
        o.iter().for_each(|&v| counts[v as usize] += 1);
        assert_eq!(counts, [10, 20, 30, 40]);
        assert_eq!(o[0], 0);
    }

    #[test]
    fn diary_audio_is_long_enough_and_deterministic() {
        let c = generate_synthetic_cohort(&small()).unwrap();
        let d = &c.diaries[0];
        let w = synthetic_diary_audio(d);
        assert_eq!(w.sample_rate_hz, 16_000);
        assert!(w.samples.len() >= 16_000);
        assert_eq!(w, synthetic_diary_audio(d));
        assert!((token_pitch("calm") - token_pitch("calm")).abs() == 0.0);
        assert!((150.0..=3400.0).contains(&token_pitch("angry")));
    }
}
