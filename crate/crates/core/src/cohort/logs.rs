//! Line-delimited sensing and EMA logs.
//!
//! Sensing: `participant_id,timestamp,kind[,payload...]` with kind one of
//! `gps` (lat, lon), `screen_unlock`, `screen_lock`, `audio_amplitude`
//! (amplitude) or `conversation` (duration in seconds).
//!
//! EMA: `participant_id,timestamp,hearing,negativeness,loudness,control,power[,origin]`
//! where `hearing` is 0/1, the four answers are left empty when `hearing=0`,
//! and the optional `origin` is `prompted` (default) or `self`.
//!
//! Blank lines and lines starting with `#` are ignored. Timestamps are RFC 3339.

use std::io::{BufRead, BufReader, Read, Write};

use super::{EmaResponse, Ordinal, ParticipantId, SensingEvent, SensingKind, SensingPayload, ValenceAnswers};
use crate::error::{Error, Result};
use crate::time::Timestamp;

pub const SENSING_HEADER: &str = "# participant_id,timestamp,kind,payload...";
pub const EMA_HEADER: &str = "# participant_id,timestamp,hearing,negativeness,loudness,control,power,origin";

fn parse_err(line: usize, cause: impl Into<String>) -> Error {
    Error::Parse {
        line,
        cause: cause.into(),
    }
}

fn for_each_record(input: impl Read, mut f: impl FnMut(usize, &str) -> Result<()>) -> Result<()> {
    let reader = BufReader::new(input);
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_err(lineno, format!("unreadable line: {e}")))?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        f(lineno, trimmed)?;
    }
    Ok(())
}

fn parse_f64(line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("{what} `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{what} `{field}` is not finite")));
    }
    Ok(v)
}

fn parse_head(line: usize, fields: &[&str]) -> Result<(ParticipantId, Timestamp)> {
    let id = ParticipantId::new(fields[0].trim()).map_err(|e| parse_err(line, e.to_string()))?;
    let ts = Timestamp::parse_rfc3339(fields[1].trim()).map_err(|e| parse_err(line, e))?;
    Ok((id, ts))
}

pub fn parse_sensing_log(input: impl Read) -> Result<Vec<SensingEvent>> {
    let mut out = Vec::new();
    for_each_record(input, |line, text| {
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() < 3 {
            return Err(parse_err(line, format!("expected at least 3 fields, found {}", fields.len())));
        }
        let (participant_id, timestamp) = parse_head(line, &fields)?;
        let kind = SensingKind::parse(fields[2].trim())
            .ok_or_else(|| parse_err(line, format!("unknown kind `{}`", fields[2].trim())))?;
        let payload_fields = &fields[3..];
        let expected = match kind {
            SensingKind::Gps => 2,
            SensingKind::AudioAmplitude | SensingKind::Conversation => 1,
            SensingKind::ScreenUnlock | SensingKind::ScreenLock => 0,
        };
        if payload_fields.len() != expected {
            return Err(parse_err(
                line,
                format!(
                    "kind `{}` takes {expected} payload field(s), found {}",
                    kind.as_str(),
                    payload_fields.len()
                ),
            ));
        }
        let payload = match kind {
            SensingKind::Gps => SensingPayload::Gps {
                lat: parse_f64(line, payload_fields[0], "latitude")?,
                lon: parse_f64(line, payload_fields[1], "longitude")?,
            },
            SensingKind::ScreenUnlock => SensingPayload::ScreenUnlock,
            SensingKind::ScreenLock => SensingPayload::ScreenLock,
            SensingKind::AudioAmplitude => {
                SensingPayload::AudioAmplitude(parse_f64(line, payload_fields[0], "amplitude")?)
            }
            SensingKind::Conversation => SensingPayload::Conversation {
                duration_s: parse_f64(line, payload_fields[0], "duration")?,
            },
        };
        payload.validate().map_err(|cause| parse_err(line, cause))?;
        out.push(SensingEvent {
            participant_id,
            timestamp,
            payload,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_sensing_log<'a>(mut out: impl Write, events: impl IntoIterator<Item = &'a SensingEvent>) -> std::io::Result<()> {
    writeln!(out, "{SENSING_HEADER}")?;
    for e in events {
        write!(out, "{},{},{}", e.participant_id, e.timestamp, e.payload.kind().as_str())?;
        match e.payload {
            SensingPayload::Gps { lat, lon } => write!(out, ",{lat},{lon}")?,
            SensingPayload::AudioAmplitude(a) => write!(out, ",{a}")?,
            SensingPayload::Conversation { duration_s } => write!(out, ",{duration_s}")?,
            SensingPayload::ScreenUnlock | SensingPayload::ScreenLock => {}
        }
        writeln!(out)?;
    }
    Ok(())
}

fn parse_ordinal(line: usize, field: &str, question: &str) -> Result<Ordinal> {
    let v: u8 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("{question} `{field}` is not an ordinal")))?;
    Ordinal::new(v).map_err(|_| parse_err(line, format!("{question} = {v} is outside 0..=3")))
}

pub fn parse_ema_log(input: impl Read) -> Result<Vec<EmaResponse>> {
    const QUESTIONS: [&str; 4] = ["negativeness", "loudness", "control", "power"];
    let mut out = Vec::new();
    for_each_record(input, |line, text| {
        let fields: Vec<&str> = text.split(',').collect();
        if !(fields.len() == 7 || fields.len() == 8) {
            return Err(parse_err(line, format!("expected 7 or 8 fields, found {}", fields.len())));
        }
        let (participant_id, timestamp) = parse_head(line, &fields)?;
        let hearing = match fields[2].trim() {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(line, format!("hearing must be 0 or 1, found `{other}`"))),
        };
        let answer_fields = &fields[3..7];
        let present = answer_fields.iter().filter(|f| !f.trim().is_empty()).count();
        let answers = match (hearing, present) {
            (false, 0) => None,
            (false, _) => {
                return Err(parse_err(
                    line,
                    "hearing=0 closes the questionnaire, but answers are present",
                ))
            }
            (true, 4) => {
                let o: Vec<Ordinal> = answer_fields
                    .iter()
                    .zip(QUESTIONS)
                    .map(|(f, q)| parse_ordinal(line, f, q))
                    .collect::<Result<_>>()?;
                Some(ValenceAnswers {
                    negativeness: o[0],
                    loudness: o[1],
                    control: o[2],
                    power: o[3],
                })
            }
            (true, _) => return Err(parse_err(line, "hearing=1 requires all four answers")),
        };
        let self_initiated = match fields.get(7).map(|s| s.trim()) {
            None | Some("") | Some("prompted") => false,
            Some("self") => true,
            Some(other) => return Err(parse_err(line, format!("unknown origin `{other}`"))),
        };
        let r = EmaResponse::new(participant_id, timestamp, hearing, answers, self_initiated)
            .map_err(|e| parse_err(line, e.to_string()))?;
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_ema_log<'a>(mut out: impl Write, responses: impl IntoIterator<Item = &'a EmaResponse>) -> std::io::Result<()> {
    writeln!(out, "{EMA_HEADER}")?;
    for r in responses {
        write!(out, "{},{},{}", r.participant_id, r.timestamp, r.hearing as u8)?;
        match r.answers() {
            Some(a) => write!(
                out,
                ",{},{},{},{}",
                a.negativeness.value(),
                a.loudness.value(),
                a.control.value(),
                a.power.value()
            )?,
            None => write!(out, ",,,,")?,
        }
        writeln!(out, ",{}", if r.self_initiated { "self" } else { "prompted" })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_sensing_log(&b""[..]).unwrap().is_empty());
        assert!(parse_ema_log(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_latitude_names_line() {
        let log = "p1,2021-03-01T00:00:00Z,screen_lock\np1,2021-03-01T00:10:00Z,gps,91.0,10.0\n";
        match parse_sensing_log(log.as_bytes()) {
            Err(Error::Parse { line, cause }) => {
                assert_eq!(line, 2);
                assert!(cause.contains("latitude"), "{cause}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_and_bad_timestamp() {
        let err = parse_sensing_log("p1,2021-03-01T00:00:00Z,wifi\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1: unknown kind `wifi`"), "{err}");
        let err = parse_sensing_log("# c\np1,notatime,screen_lock\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2: malformed timestamp"), "{err}");
    }

    #[test]
    fn negative_values_rejected() {
        assert!(parse_sensing_log("p,2021-03-01T00:00:00Z,audio_amplitude,-1\n".as_bytes()).is_err());
        assert!(parse_sensing_log("p,2021-03-01T00:00:00Z,conversation,-3\n".as_bytes()).is_err());
    }

    #[test]
    fn gps_line_round_trips() {
        let log = "p1,2021-03-01T08:00:00Z,gps,40.712776,-74.005974\n";
        let events = parse_sensing_log(log.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_sensing_log(&mut buf, &events).unwrap();
        let again = parse_sensing_log(&buf[..]).unwrap();
        assert_eq!(events, again);
        assert!(String::from_utf8(buf).unwrap().ends_with(log));
    }

    #[test]
    fn ema_rows() {
        let rows = parse_ema_log("p1,2021-03-01T14:00:00Z,1,3,3,1,3\np1,2021-03-01T17:00:00Z,0,,,,\n".as_bytes()).unwrap();
        let a = rows[0].answers().unwrap();
        assert_eq!(
            [a.negativeness, a.loudness, a.control, a.power].map(Ordinal::value),
            [3, 3, 1, 3]
        );
        assert!(!rows[1].hearing && rows[1].answers().is_none());
    }

    #[test]
    fn ema_gate_and_range_errors() {
        let err = parse_ema_log("p1,2021-03-01T14:00:00Z,0,1,1,1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_ema_log("p1,2021-03-01T14:00:00Z,1,1,5,1,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("loudness = 5"), "{err}");
    }

    #[test]
    fn ema_round_trip_keeps_origin() {
        let src = "p1,2021-03-01T14:00:00Z,1,0,1,2,3,self\np2,2021-03-02T10:30:00Z,0,,,,,prompted\n";
        let rows = parse_ema_log(src.as_bytes()).unwrap();
        assert!(rows[0].self_initiated);
        let mut buf = Vec::new();
        write_ema_log(&mut buf, &rows).unwrap();
        assert_eq!(parse_ema_log(&buf[..]).unwrap(), rows);
    }
}
