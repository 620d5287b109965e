//! Clip records and their JSONL on-disk form.
//!
//! A [`ClipRecord`] is one video clip: a feature vector plus the various
//! labels it accumulates as it moves through the pipeline (weak label from
//! its source video, teacher prediction, relabeled pseudo-label, and — for
//! synthetic data — the ground-truth label).

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of action classes; guaranteed to be at least 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct ClassCount(usize);

impl ClassCount {
    /// Wraps `n`, rejecting class counts below 2.
    pub fn new(n: usize) -> Result<Self, RecordError> {
        if n < 2 {
            return Err(RecordError::ClassCountTooSmall(n));
        }
        Ok(Self(n))
    }

    /// The raw class count.
    #[must_use]
    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for ClassCount {
    type Error = RecordError;

    fn try_from(n: usize) -> Result<Self, Self::Error> {
        Self::new(n)
    }
}

impl From<ClassCount> for usize {
    fn from(n: ClassCount) -> usize {
        n.0
    }
}

impl fmt::Display for ClassCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One clip: identifiers, feature vector, and whatever labels are known.
///
/// Optional fields are omitted from serialized records until the pipeline
/// stage that produces them has run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    /// Unique id of the clip.
    pub clip_id: String,
    /// Id of the video the clip was cut from; many clips share one video.
    pub video_id: String,
    /// Video-level label inherited by the clip (the weak label).
    pub weak_label: usize,
    /// Precomputed feature vector.
    pub features: Vec<f64>,
    /// Ground-truth clip label, known only for synthetic or curated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<usize>,
    /// Teacher model's predicted class for the clip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_pred: Option<usize>,
    /// Label assigned by a relabeling strategy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_label: Option<usize>,
}

/// Errors from record validation and JSONL I/O.
#[derive(Debug, Error)]
pub enum RecordError {
    /// Class counts below 2 leave nothing to classify.
    #[error("class count must be at least 2, got {0}")]
    ClassCountTooSmall(usize),
    /// Underlying reader or writer failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// A line that is not a valid record, reported with its 1-based number.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Reads one record per line, skipping blank lines.
///
/// Parse failures report the 1-based line number of the offending line.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<ClipRecord>, RecordError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| RecordError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Writes one record per line in input order.
pub fn write_jsonl<W: Write>(mut writer: W, records: &[ClipRecord]) -> Result<(), RecordError> {
    for record in records {
        let line = serde_json::to_string(record).expect("records serialize infallibly");
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> ClipRecord {
        ClipRecord {
            clip_id: "web-q000-v0001-c002".into(),
            video_id: "web-q000-v0001".into(),
            weak_label: 0,
            features: vec![0.25, -1.5, 0.1],
            true_label: Some(3),
            teacher_pred: None,
            pseudo_label: None,
        }
    }

    #[test]
    fn class_count_rejects_zero_and_one() {
        assert!(ClassCount::new(0).is_err());
        assert!(ClassCount::new(1).is_err());
        assert_eq!(ClassCount::new(2).unwrap().get(), 2);
    }

    #[test]
    fn class_count_deserialization_validates() {
        assert!(serde_json::from_str::<ClassCount>("1").is_err());
        let n: ClassCount = serde_json::from_str("7").unwrap();
        assert_eq!(n.get(), 7);
    }

    #[test]
    fn optional_fields_are_omitted_when_absent() {
        let json = serde_json::to_string(&sample_record()).unwrap();
        assert!(json.contains("\"true_label\":3"));
        assert!(!json.contains("teacher_pred"));
        assert!(!json.contains("pseudo_label"));
    }

    #[test]
    fn jsonl_round_trip_preserves_records_and_floats() {
        let mut records = vec![sample_record()];
        records.push(ClipRecord {
            clip_id: "c2".into(),
            video_id: "v2".into(),
            weak_label: 1,
            // Values chosen to be awkward in decimal.
            features: vec![0.1 + 0.2, 1.0 / 3.0, f64::MIN_POSITIVE],
            true_label: None,
            teacher_pred: Some(4),
            pseudo_label: Some(14),
        });

        let mut buf = Vec::new();
        write_jsonl(&mut buf, &records).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, records);

        // Serialization is stable byte-for-byte across round trips.
        let mut again = Vec::new();
        write_jsonl(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn read_jsonl_skips_blank_lines() {
        let input = b"\n  \n{\"clip_id\":\"a\",\"video_id\":\"v\",\"weak_label\":0,\"features\":[1.0]}\n\n";
        let records = read_jsonl(&input[..]).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].clip_id, "a");
    }

    #[test]
    fn read_jsonl_reports_line_numbers() {
        let input = b"{\"clip_id\":\"a\",\"video_id\":\"v\",\"weak_label\":0,\"features\":[]}\nnot json\n";
        let err = read_jsonl(&input[..]).unwrap_err();
        match err {
            RecordError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
