use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{CorpusError, UtterancePair};

/// Reads a JSONL corpus file, one record per line, preserving file order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<UtterancePair>, CorpusError> {
    let file = File::open(path.as_ref())?;
    parse_corpus(BufReader::new(file))
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<UtterancePair>, CorpusError> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: UtterancePair = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        pair.validate().map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(pair.id.clone()) {
            return Err(CorpusError::DuplicateId(pair.id));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_corpus(mut out: impl Write, pairs: &[UtterancePair]) -> Result<(), CorpusError> {
    for pair in pairs {
        let line = serde_json::to_string(pair).map_err(|e| CorpusError::Invalid {
            id: pair.id.clone(),
            reason: e.to_string(),
        })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, pairs: &[UtterancePair]) -> Result<(), CorpusError> {
    let file = File::create(path.as_ref())?;
    write_corpus(BufWriter::new(file), pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{OpenLabel, Split};

    const THREE: &str = r#"{"id":"p1","instruction":"CCA1234, climb and maintain 8900 meters","readback":"climb and maintain 8900 meters, CCA1234","label":"correct","split":"train"}
{"id":"p2","instruction":"CES501, contact tower 118.1","readback":"tower 118.1, CES501","label":"incomplete","split":"test"}
{"id":"p3","instruction":"CSN88, say again","readback":"say again, CSN88","split":"calibration"}
"#;

    #[test]
    fn three_valid_lines_in_order() {
        let pairs = parse_corpus(THREE.as_bytes()).unwrap();
        let ids: Vec<_> = pairs.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["p1", "p2", "p3"]);
        assert_eq!(pairs[1].label, Some(OpenLabel::Incomplete));
        assert_eq!(pairs[2].label, None);
        assert_eq!(pairs[2].split, Split::Calibration);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let text = format!("{}{}", THREE, THREE.lines().next().unwrap());
        match parse_corpus(text.as_bytes()) {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "p1"),
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = format!("{}{{\"id\": \"p9\", \"instruction\"\n", THREE);
        match parse_corpus(text.as_bytes()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_label = r#"{"id":"x","instruction":"a","readback":"b","label":"maybe","split":"train"}"#;
        assert!(matches!(
            parse_corpus(bad_label.as_bytes()),
            Err(CorpusError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn save_then_load_is_identity() {
        let pairs = parse_corpus(THREE.as_bytes()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(&path, &pairs).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), pairs);
    }
}
