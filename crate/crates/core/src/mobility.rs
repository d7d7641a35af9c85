//! Hourly behavioural feature streams from raw sensing events.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::cohort::{ParticipantId, SensingEvent, SensingPayload};
use crate::error::{Error, Result};
use crate::time::{Timestamp, MS_PER_HOUR, MS_PER_MINUTE};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const WINDOW_HOURS: usize = 24;
pub const N_STREAMS: usize = 7;
/// Minimum cumulative dwell for a cluster to count as a significant location.
pub const MIN_DWELL_MINUTES: f64 = 30.0;

/// The seven hourly streams, in window row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureStream {
    PlacesVisited,
    DistanceTravelledM,
    UnlockDurationS,
    NUnlocks,
    AudioAmplitudeMean,
    ConversationDurationS,
    NConversations,
}

impl FeatureStream {
    pub const ALL: [FeatureStream; N_STREAMS] = [
        FeatureStream::PlacesVisited,
        FeatureStream::DistanceTravelledM,
        FeatureStream::UnlockDurationS,
        FeatureStream::NUnlocks,
        FeatureStream::AudioAmplitudeMean,
        FeatureStream::ConversationDurationS,
        FeatureStream::NConversations,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureStream::PlacesVisited => "places_visited",
            FeatureStream::DistanceTravelledM => "distance_travelled_m",
            FeatureStream::UnlockDurationS => "unlock_duration_s",
            FeatureStream::NUnlocks => "n_unlocks",
            FeatureStream::AudioAmplitudeMean => "audio_amplitude_mean",
            FeatureStream::ConversationDurationS => "conversation_duration_s",
            FeatureStream::NConversations => "n_conversations",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    pub timestamp: Timestamp,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, timestamp: Timestamp) -> Result<Self> {
        SensingPayload::Gps { lat, lon }
            .validate()
            .map_err(|r| Error::invalid("coordinate", r))?;
        Ok(GeoPoint { lat, lon, timestamp })
    }
}

/// Great-circle distance in meters.
pub fn haversine(a: &GeoPoint, b: &GeoPoint) -> f64 {
    haversine_deg(a.lat, a.lon, b.lat, b.lon)
}

pub fn haversine_deg(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = p2 - p1;
    let dlambda = (lon2 - lon1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// DBSCAN over haversine distance. Returns a cluster id per point, `None` for
/// noise. Clusters are numbered in order of their first core point; a border
/// point reachable from several clusters joins the earliest.
pub fn dbscan(points: &[GeoPoint], eps_m: f64, min_samples: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let neighbours = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| haversine(&points[i], &points[j]) <= eps_m)
            .collect()
    };
    let mut labels = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = neighbours(i);
        if seeds.len() < min_samples {
            continue;
        }
        labels[i] = Some(next);
        let mut queue: VecDeque<usize> = seeds.into();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(next);
            }
            if !visited[j] {
                visited[j] = true;
                let nb = neighbours(j);
                if nb.len() >= min_samples {
                    queue.extend(nb);
                }
            }
        }
        next += 1;
    }
    labels
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificantLocation {
    pub center_lat: f64,
    pub center_lon: f64,
    pub dwell_minutes: f64,
    pub member_count: usize,
    /// Timestamp of the earliest member fix.
    pub first_entered: Timestamp,
}

/// A maximal run of consecutive fixes inside one significant location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visit {
    pub location: usize,
    pub start: Timestamp,
    pub end: Timestamp,
}

pub fn significant_locations(track: &[GeoPoint], eps_m: f64, min_samples: usize) -> Vec<SignificantLocation> {
    location_visits(track, eps_m, min_samples).0
}

/// Significant locations plus the time-ordered visits to them. `track` must be
/// sorted by timestamp.
pub fn location_visits(track: &[GeoPoint], eps_m: f64, min_samples: usize) -> (Vec<SignificantLocation>, Vec<Visit>) {
    let labels = dbscan(track, eps_m, min_samples);
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);

    let mut runs: Vec<(usize, usize, usize)> = Vec::new(); // (cluster, first idx, last idx)
    for (i, l) in labels.iter().enumerate() {
        let Some(c) = *l else { continue };
        match runs.last_mut() {
            Some((rc, _, last)) if *rc == c && *last + 1 == i => *last = i,
            _ => runs.push((c, i, i)),
        }
    }

    let mut dwell_ms = vec![0i64; n_clusters];
    for &(c, a, b) in &runs {
        dwell_ms[c] += track[b].timestamp - track[a].timestamp;
    }

    let mut index_of = vec![None; n_clusters];
    let mut locations = Vec::new();
    for c in 0..n_clusters {
        let dwell = dwell_ms[c] as f64 / MS_PER_MINUTE as f64;
        if dwell < MIN_DWELL_MINUTES {
            continue;
        }
        let members: Vec<&GeoPoint> = track
            .iter()
            .zip(&labels)
            .filter(|(_, l)| **l == Some(c))
            .map(|(p, _)| p)
            .collect();
        let k = members.len() as f64;
        index_of[c] = Some(locations.len());
        locations.push(SignificantLocation {
            center_lat: members.iter().map(|p| p.lat).sum::<f64>() / k,
            center_lon: members.iter().map(|p| p.lon).sum::<f64>() / k,
            dwell_minutes: dwell,
            member_count: members.len(),
            first_entered: members.iter().map(|p| p.timestamp).min().expect("clusters are non-empty"),
        });
    }
    // locations are listed by first entry
    let mut order: Vec<usize> = (0..locations.len()).collect();
    order.sort_by_key(|&i| (locations[i].first_entered, i));
    let mut rank = vec![0; locations.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let visits = runs
        .iter()
        .filter_map(|&(c, a, b)| {
            index_of[c].map(|i| Visit {
                location: rank[i],
                start: track[a].timestamp,
                end: track[b].timestamp,
            })
        })
        .collect();
    let locations = order.into_iter().map(|i| locations[i].clone()).collect();
    (locations, visits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlacesMode {
    /// Each location counts in the hour it was first entered.
    #[default]
    FirstEntryPerHour,
    /// The window-level count, replicated across all 24 hours.
    WindowCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityConfig {
    pub eps_m: f64,
    pub min_samples: usize,
    pub places_mode: PlacesMode,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            eps_m: 100.0,
            min_samples: 5,
            places_mode: PlacesMode::FirstEntryPerHour,
        }
    }
}

/// Seven hourly streams over the 24 hours before an EMA (hour 0 oldest).
#[derive(Debug, Clone, PartialEq)]
pub struct SensingWindow {
    pub participant_id: ParticipantId,
    pub ema_timestamp: Timestamp,
    pub values: [[f64; WINDOW_HOURS]; N_STREAMS],
}

impl SensingWindow {
    pub fn row(&self, s: FeatureStream) -> &[f64; WINDOW_HOURS] {
        &self.values[s.index()]
    }
}

fn kind_rank(p: &SensingPayload) -> (u8, u64, u64) {
    match *p {
        SensingPayload::Gps { lat, lon } => (0, lat.to_bits(), lon.to_bits()),
        SensingPayload::ScreenUnlock => (1, 0, 0),
        SensingPayload::ScreenLock => (2, 0, 0),
        SensingPayload::AudioAmplitude(a) => (3, a.to_bits(), 0),
        SensingPayload::Conversation { duration_s } => (4, duration_s.to_bits(), 0),
    }
}

/// Aggregates one participant's events in `[ema − 24 h, ema)` into hourly streams.
/// Events outside the window are ignored; input order does not matter.
pub fn hourly_window<'a>(
    participant_id: &ParticipantId,
    events: impl IntoIterator<Item = &'a SensingEvent>,
    ema_timestamp: Timestamp,
    cfg: &MobilityConfig,
) -> Result<SensingWindow> {
    let start = ema_timestamp - WINDOW_HOURS as i64 * MS_PER_HOUR;
    let mut evs: Vec<&SensingEvent> = Vec::new();
    for e in events {
        if &e.participant_id != participant_id {
            return Err(Error::invalid(
                "sensing window",
                format!("event for {} passed with events of {participant_id}", e.participant_id),
            ));
        }
        if e.timestamp >= start && e.timestamp < ema_timestamp {
            evs.push(e);
        }
    }
    evs.sort_by_key(|e| (e.timestamp, kind_rank(&e.payload)));

    let bucket = |t: Timestamp| (((t - start) / MS_PER_HOUR) as usize).min(WINDOW_HOURS - 1);
    let mut v = [[0.0f64; WINDOW_HOURS]; N_STREAMS];

    // location streams
    let track: Vec<GeoPoint> = evs
        .iter()
        .filter_map(|e| match e.payload {
            SensingPayload::Gps { lat, lon } => Some(GeoPoint {
                lat,
                lon,
                timestamp: e.timestamp,
            }),
            _ => None,
        })
        .collect();
    let (locations, visits) = location_visits(&track, cfg.eps_m, cfg.min_samples);
    match cfg.places_mode {
        PlacesMode::FirstEntryPerHour => {
            for l in &locations {
                v[FeatureStream::PlacesVisited.index()][bucket(l.first_entered)] += 1.0;
            }
        }
        PlacesMode::WindowCount => v[FeatureStream::PlacesVisited.index()] = [locations.len() as f64; WINDOW_HOURS],
    }
    let mut current: Option<usize> = None;
    for visit in &visits {
        if let Some(prev) = current {
            if prev != visit.location {
                let (a, b) = (&locations[prev], &locations[visit.location]);
                v[FeatureStream::DistanceTravelledM.index()][bucket(visit.start)] +=
                    haversine_deg(a.center_lat, a.center_lon, b.center_lat, b.center_lon);
            }
        }
        current = Some(visit.location);
    }

    // phone usage
    let mut spans: Vec<(Timestamp, Timestamp)> = Vec::new();
    let mut open: Option<Timestamp> = None;
    for e in &evs {
        match e.payload {
            SensingPayload::ScreenUnlock => {
                if let Some(s) = open.replace(e.timestamp) {
                    spans.push((s, e.timestamp));
                }
                v[FeatureStream::NUnlocks.index()][bucket(e.timestamp)] += 1.0;
            }
            SensingPayload::ScreenLock => {
                if let Some(s) = open.take() {
                    spans.push((s, e.timestamp));
                }
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        spans.push((s, ema_timestamp));
    }
    let unlock = &mut v[FeatureStream::UnlockDurationS.index()];
    for (s, e) in spans {
        for (h, slot) in unlock.iter_mut().enumerate() {
            let b0 = start + h as i64 * MS_PER_HOUR;
            let b1 = b0 + MS_PER_HOUR;
            let overlap = e.min(b1) - s.max(b0);
            if overlap > 0 {
                *slot += overlap as f64 / 1000.0;
            }
        }
    }

    // microphone
    let mut amp_sum = [0.0f64; WINDOW_HOURS];
    let mut amp_n = [0usize; WINDOW_HOURS];
    for e in &evs {
        match e.payload {
            SensingPayload::AudioAmplitude(a) => {
                let b = bucket(e.timestamp);
                amp_sum[b] += a;
                amp_n[b] += 1;
            }
            SensingPayload::Conversation { duration_s } => {
                let b = bucket(e.timestamp);
                v[FeatureStream::ConversationDurationS.index()][b] += duration_s;
                v[FeatureStream::NConversations.index()][b] += 1.0;
            }
            _ => {}
        }
    }
    for h in 0..WINDOW_HOURS {
        if amp_n[h] > 0 {
            v[FeatureStream::AudioAmplitudeMean.index()][h] = amp_sum[h] / amp_n[h] as f64;
        }
    }

    Ok(SensingWindow {
        participant_id: participant_id.clone(),
        ema_timestamp,
        values: v,
    })
}
