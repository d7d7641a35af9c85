//! Cohort directories and the diary token-stack archive.
//!
//! A cohort directory holds `sensing.log`, `ema.log` and `diaries.tarc`. The
//! diary archive stores one `12 × 768` tensor per distinct token stack and a
//! manifest (`metadata`) that lists the participant roster and, for every
//! diary, its sentences as sequences of `{text, tensor}` references. Tokens
//! that share a layer stack in memory share one tensor on disk.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    parse_ema_log, parse_sensing_log, write_ema_log, write_sensing_log, Cohort, DiaryTokenStack, Participant,
    ParticipantId, Token, TokenLayers, TOKEN_LAYERS, TOKEN_WIDTH,
};
use crate::archive::{Tensor, TensorArchive};
use crate::error::{Error, Result};
use crate::time::Timestamp;

pub const SENSING_FILE: &str = "sensing.log";
pub const EMA_FILE: &str = "ema.log";
pub const DIARY_FILE: &str = "diaries.tarc";
pub const COHORT_FILES: [&str; 3] = [SENSING_FILE, EMA_FILE, DIARY_FILE];

const DIARY_KIND: &str = "diary-token-stacks";

#[derive(Serialize, Deserialize)]
struct TokenRef {
    text: String,
    tensor: String,
}

#[derive(Serialize, Deserialize)]
struct DiaryEntry {
    participant_id: ParticipantId,
    ema_timestamp: Timestamp,
    sentences: Vec<Vec<TokenRef>>,
}

#[derive(Serialize, Deserialize)]
struct DiaryManifest {
    kind: String,
    participants: Vec<Participant>,
    diaries: Vec<DiaryEntry>,
}

pub fn save_diaries(path: impl AsRef<Path>, participants: &[Participant], diaries: &[DiaryTokenStack]) -> Result<()> {
    let mut archive = TensorArchive::new();
    let mut names: HashMap<*const f32, String> = HashMap::new();
    let mut entries = Vec::with_capacity(diaries.len());
    for d in diaries {
        let mut sentences = Vec::with_capacity(d.sentences.len());
        for s in &d.sentences {
            let mut refs = Vec::with_capacity(s.len());
            for tok in s {
                let key = tok.layers.as_slice().as_ptr();
                let name = match names.get(&key) {
                    Some(n) => n.clone(),
                    None => {
                        let n = format!("token/{:06}", names.len());
                        archive.insert(
                            n.clone(),
                            Tensor::f32(vec![TOKEN_LAYERS, TOKEN_WIDTH], tok.layers.as_slice().to_vec())?,
                        );
                        names.insert(key, n.clone());
                        n
                    }
                };
                refs.push(TokenRef {
                    text: tok.text.to_string(),
                    tensor: name,
                });
            }
            sentences.push(refs);
        }
        entries.push(DiaryEntry {
            participant_id: d.participant_id.clone(),
            ema_timestamp: d.ema_timestamp,
            sentences,
        });
    }
    archive.metadata = serde_json::to_value(DiaryManifest {
        kind: DIARY_KIND.into(),
        participants: participants.to_vec(),
        diaries: entries,
    })?;
    archive.save(path)
}

/// Loads the roster and diary stacks from a diary archive.
pub fn load_diaries(path: impl AsRef<Path>) -> Result<(Vec<Participant>, Vec<DiaryTokenStack>)> {
    let archive = TensorArchive::load(path)?;
    let manifest: DiaryManifest = serde_json::from_value(archive.metadata.clone())
        .map_err(|e| Error::CorruptArchive(format!("diary manifest: {e}")))?;
    if manifest.kind != DIARY_KIND {
        return Err(Error::CorruptArchive(format!("expected a {DIARY_KIND} archive, found `{}`", manifest.kind)));
    }
    let mut participants = Vec::with_capacity(manifest.participants.len());
    for p in manifest.participants {
        participants.push(Participant::new(p.id, p.timezone_offset)?);
    }
    let mut cache: HashMap<String, TokenLayers> = HashMap::new();
    let mut diaries = Vec::with_capacity(manifest.diaries.len());
    for d in manifest.diaries {
        let mut sentences = Vec::with_capacity(d.sentences.len());
        for s in d.sentences {
            let mut tokens = Vec::with_capacity(s.len());
            for r in s {
                let layers = match cache.get(&r.tensor) {
                    Some(l) => l.clone(),
                    None => {
                        let t = archive.expect(&r.tensor, &[TOKEN_LAYERS, TOKEN_WIDTH])?;
                        let values = t
                            .as_f32()
                            .ok_or_else(|| Error::CorruptArchive(format!("`{}` must be f32", r.tensor)))?;
                        let l = TokenLayers::new(values.to_vec())?;
                        cache.insert(r.tensor.clone(), l.clone());
                        l
                    }
                };
                tokens.push(Token {
                    text: r.text.into(),
                    layers,
                });
            }
            sentences.push(tokens);
        }
        diaries.push(DiaryTokenStack {
            participant_id: d.participant_id,
            ema_timestamp: d.ema_timestamp,
            sentences,
        });
    }
    Ok((participants, diaries))
}

pub fn save_cohort(dir: impl AsRef<Path>, cohort: &Cohort) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write_log = |name: &str, f: &dyn Fn(&mut BufWriter<fs::File>) -> std::io::Result<()>| -> Result<()> {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
    };
    write_log(SENSING_FILE, &|w| write_sensing_log(w, &cohort.events))?;
    write_log(EMA_FILE, &|w| write_ema_log(w, &cohort.ema))?;
    save_diaries(dir.join(DIARY_FILE), &cohort.participants, &cohort.diaries)
}

pub fn load_cohort(dir: impl AsRef<Path>) -> Result<Cohort> {
    let dir = dir.as_ref();
    let open = |name: &str| {
        let path = dir.join(name);
        fs::File::open(&path).map_err(|e| Error::io(&path, e))
    };
    let events = parse_sensing_log(open(SENSING_FILE)?).map_err(|e| in_file(SENSING_FILE, e))?;
    let ema = parse_ema_log(open(EMA_FILE)?).map_err(|e| in_file(EMA_FILE, e))?;
    let (participants, diaries) = load_diaries(dir.join(DIARY_FILE))?;
    Cohort::new(participants, events, ema, diaries)
}

fn in_file(name: &str, e: Error) -> Error {
    match e {
        Error::Parse { line, cause } => Error::Parse {
            line,
            cause: format!("{name}: {cause}"),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_stacks_are_stored_once_and_reshared() {
        let pid = ParticipantId::new("p1").unwrap();
        let layers = TokenLayers::new(vec![0.5; TOKEN_LAYERS * TOKEN_WIDTH]).unwrap();
        let tok = |t: &str| Token {
            text: t.into(),
            layers: layers.clone(),
        };
        let d = DiaryTokenStack {
            participant_id: pid.clone(),
            ema_timestamp: Timestamp::from_secs(10),
            sentences: vec![vec![tok("a"), tok("b")], vec![tok("a")]],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tarc");
        let roster = vec![Participant::new(pid, 60).unwrap()];
        save_diaries(&path, &roster, std::slice::from_ref(&d)).unwrap();
        assert_eq!(TensorArchive::load(&path).unwrap().len(), 1);
        let (p, back) = load_diaries(&path).unwrap();
        assert_eq!(p, roster);
        assert_eq!(back, vec![d]);
        assert!(back[0].sentences[0][0].layers.ptr_eq(&back[0].sentences[1][0].layers));
    }
}
