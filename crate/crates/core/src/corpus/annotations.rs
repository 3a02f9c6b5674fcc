use std::collections::HashSet;

use super::labels::{Emotion, Intent, Label};
use crate::error::{data_err, Error, Result};

/// Column names of the annotation CSV, in order.
pub const CSV_HEADER: [&str; 11] = [
    "Subtitle",
    "Dia_No",
    "Utt_No",
    "Video_name",
    "Season",
    "Episode",
    "Begin_timestamp",
    "End_timestamp",
    "Emotion",
    "Intent",
    "Speaker",
];

/// One annotated utterance. Timestamps are milliseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub subtitle: String,
    pub dia_no: u32,
    pub utt_no: u32,
    pub video_name: String,
    pub season: Option<u32>,
    pub episode: u32,
    pub begin_ms: u64,
    pub end_ms: u64,
    pub emotion: Emotion,
    pub intent: Intent,
    pub speaker: u8,
}

impl AnnotationRecord {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.begin_ms
    }
}

/// Parses `HH:MM:SS,mmm` (a `.` before the milliseconds is also accepted).
pub fn parse_timestamp(s: &str) -> Option<u64> {
    let s = s.trim();
    let (hms, ms) = s.rsplit_once([',', '.'])?;
    let mut parts = hms.split(':');
    let (h, m, sec) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() || ms.len() != 3 || m.len() != 2 || sec.len() != 2 || h.is_empty() {
        return None;
    }
    let num = |x: &str| -> Option<u64> {
        if x.bytes().all(|b| b.is_ascii_digit()) {
            x.parse().ok()
        } else {
            None
        }
    };
    let (h, m, sec, ms) = (num(h)?, num(m)?, num(sec)?, num(ms)?);
    if m >= 60 || sec >= 60 {
        return None;
    }
    Some(((h * 60 + m) * 60 + sec) * 1000 + ms)
}

pub fn format_timestamp(ms: u64) -> String {
    let (h, rem) = (ms / 3_600_000, ms % 3_600_000);
    let (m, rem) = (rem / 60_000, rem % 60_000);
    format!("{h:02}:{m:02}:{:02},{:03}", rem / 1000, rem % 1000)
}

fn header_matches(found: &str, expected: &str) -> bool {
    let found = found.trim().trim_start_matches('\u{feff}');
    let alias = match expected {
        "Season" => Some("#Sea"),
        "Episode" => Some("#Epi"),
        _ => None,
    };
    found.eq_ignore_ascii_case(expected) || alias.is_some_and(|a| found.eq_ignore_ascii_case(a))
}

/// Parses and validates an annotation CSV.
pub fn parse_annotations_csv(bytes: &[u8]) -> Result<Vec<AnnotationRecord>> {
    let bytes = bytes.strip_prefix("\u{feff}".as_bytes()).unwrap_or(bytes);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header = reader.headers()?.clone();
    if header.len() != CSV_HEADER.len() || !header.iter().zip(CSV_HEADER).all(|(f, e)| header_matches(f, e)) {
        return Err(data_err!(
            "annotation header must be {} columns: {}; found {:?}",
            CSV_HEADER.len(),
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>()
        ));
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(i as u64 + 2, |p| p.line());
        if row.len() != CSV_HEADER.len() {
            return Err(data_err!(
                "row {line}: expected {} fields, found {}",
                CSV_HEADER.len(),
                row.len()
            ));
        }
        let record = parse_row(&row, line)?;
        if !seen.insert((record.dia_no, record.utt_no)) {
            return Err(data_err!(
                "row {line}: duplicate utterance (Dia_No {}, Utt_No {})",
                record.dia_no,
                record.utt_no
            ));
        }
        records.push(record);
    }
    Ok(records)
}

fn parse_row(row: &csv::StringRecord, line: u64) -> Result<AnnotationRecord> {
    let field = |k: usize| row.get(k).unwrap_or("").trim();
    let int = |k: usize| -> Result<u64> {
        field(k).parse::<u64>().map_err(|_| {
            data_err!(
                "row {line}: {} must be a non-negative integer, got \"{}\"",
                CSV_HEADER[k],
                field(k)
            )
        })
    };
    let small = |k: usize| -> Result<u32> {
        u32::try_from(int(k)?).map_err(|_| data_err!("row {line}: {} out of range", CSV_HEADER[k]))
    };
    let stamp = |k: usize| -> Result<u64> {
        parse_timestamp(field(k)).ok_or_else(|| {
            data_err!(
                "row {line}: malformed {} \"{}\" (expected HH:MM:SS,mmm)",
                CSV_HEADER[k],
                field(k)
            )
        })
    };
    let season = match field(4) {
        "-" | "" => None,
        _ => Some(small(4)?),
    };
    let begin_ms = stamp(6)?;
    let end_ms = stamp(7)?;
    if begin_ms >= end_ms {
        return Err(data_err!(
            "row {line}: begin {} is not before end {}",
            field(6),
            field(7)
        ));
    }
    let emotion = Emotion::parse(field(8)).ok_or_else(|| data_err!("row {line}: unknown emotion \"{}\"", field(8)))?;
    let intent = Intent::parse(field(9)).ok_or_else(|| data_err!("row {line}: unknown intent \"{}\"", field(9)))?;
    let speaker = match field(10) {
        "0" => 0,
        "1" => 1,
        other => return Err(data_err!("row {line}: speaker must be 0 or 1, got \"{other}\"")),
    };
    Ok(AnnotationRecord {
        subtitle: row.get(0).unwrap_or("").to_string(),
        dia_no: small(1)?,
        utt_no: small(2)?,
        video_name: field(3).to_string(),
        season,
        episode: small(5)?,
        begin_ms,
        end_ms,
        emotion,
        intent,
        speaker,
    })
}

pub fn serialize_annotations_csv(records: &[AnnotationRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in records {
        let season = r.season.map_or_else(|| "-".to_string(), |s| s.to_string());
        w.write_record([
            r.subtitle.as_str(),
            &r.dia_no.to_string(),
            &r.utt_no.to_string(),
            &r.video_name,
            &season,
            &r.episode.to_string(),
            &format_timestamp(r.begin_ms),
            &format_timestamp(r.end_ms),
            r.emotion.name(),
            r.intent.name(),
            &r.speaker.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("csv buffer: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_parse_to_milliseconds() {
        assert_eq!(parse_timestamp("00:24:09,900"), Some(1_449_900));
        assert_eq!(parse_timestamp("00:24:12,530"), Some(1_452_530));
        assert_eq!(parse_timestamp("01:00:00.001"), Some(3_600_001));
        assert_eq!(parse_timestamp("00:61:00,000"), None);
        assert_eq!(parse_timestamp("00:24:09"), None);
        assert_eq!(parse_timestamp("aa:24:09,900"), None);
        assert_eq!(format_timestamp(1_449_900), "00:24:09,900");
    }
}
