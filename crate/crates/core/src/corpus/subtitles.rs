use super::annotations::parse_timestamp;
use crate::error::{data_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtitleEntry {
    pub index: u32,
    pub begin_ms: u64,
    pub end_ms: u64,
    /// Text lines joined with single spaces.
    pub text: String,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses block-structured subtitles: an index line, a
/// `HH:MM:SS,mmm --> HH:MM:SS,mmm` line, text lines, then a blank line.
/// Entries come back sorted by start time.
pub fn parse_subtitle_file(bytes: &[u8]) -> Result<Vec<SubtitleEntry>> {
    let text = String::from_utf8_lossy(bytes);
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let lines: Vec<&str> = text.lines().map(str::trim_end).collect();

    let mut entries = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let index_line = i + 1;
        let index = lines[i]
            .trim()
            .parse::<u32>()
            .map_err(|_| parse_err(index_line, format!("expected a block index, found \"{}\"", lines[i])))?;
        i += 1;
        let stamp_line = i + 1;
        let stamps = lines
            .get(i)
            .ok_or_else(|| parse_err(stamp_line, "block ends before its timestamp line"))?;
        let (begin, end) = stamps
            .split_once("-->")
            .ok_or_else(|| parse_err(stamp_line, format!("malformed timestamp line \"{stamps}\"")))?;
        let begin_ms = parse_timestamp(begin)
            .ok_or_else(|| parse_err(stamp_line, format!("malformed start time \"{}\"", begin.trim())))?;
        // Some files append positioning hints after the end time.
        let end = end.split_whitespace().next().unwrap_or("");
        let end_ms =
            parse_timestamp(end).ok_or_else(|| parse_err(stamp_line, format!("malformed end time \"{end}\"")))?;
        if begin_ms >= end_ms {
            return Err(data_err!(
                "subtitle {index} (line {stamp_line}): start {} is not before end {}",
                begin.trim(),
                end
            ));
        }
        i += 1;
        let mut text_lines = Vec::new();
        while i < lines.len() && !lines[i].trim().is_empty() {
            text_lines.push(lines[i].trim());
            i += 1;
        }
        entries.push(SubtitleEntry {
            index,
            begin_ms,
            end_ms,
            text: text_lines.join(" "),
        });
    }
    entries.sort_by_key(|e| e.begin_ms);
    Ok(entries)
}
