//! Dataset persistence: one JSON object per line, one line per example.
//!
//! Reading validates every record (score domains, split names, structural
//! invariants) and reports failures with the 1-based line number, so a
//! corrupt or hand-edited file fails loudly instead of poisoning a run.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DataError, QaExample};

pub fn write_jsonl(path: &Path, examples: &[QaExample]) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    for example in examples {
        serde_json::to_writer(&mut out, example)
            .map_err(|e| DataError::Parse { line: 0, msg: format!("serialize: {e}") })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<QaExample>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| DataError::Parse { line: i + 1, msg };
        let example: QaExample =
            serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        example.validate().map_err(|e| parse(e.to_string()))?;
        examples.push(example);
    }
    Ok(examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, CorpusSpec};
    use crate::model::ModelConfig;

    fn small_corpus() -> Vec<QaExample> {
        let spec = CorpusSpec { n_train: 8, n_dev: 2, n_test: 2, ..CorpusSpec::default() };
        generate_corpus(&spec, &ModelConfig::default(), 3).unwrap()
    }

    #[test]
    fn round_trip_preserves_every_field() {
        let examples = small_corpus();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        write_jsonl(&path, &examples).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(examples, back);
    }

    #[test]
    fn written_file_is_one_json_object_per_line() {
        let examples = small_corpus();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        write_jsonl(&path, &examples).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), examples.len());
        for line in text.lines() {
            serde_json::from_str::<serde_json::Value>(line).unwrap();
        }
    }

    #[test]
    fn malformed_json_reports_its_line_number() {
        let examples = small_corpus();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        write_jsonl(&path, &examples).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        let third_start = text.lines().take(2).map(|l| l.len() + 1).sum::<usize>();
        text.insert(third_start, '{');
        std::fs::write(&path, text).unwrap();
        match read_jsonl(&path) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a parse error on line 3, got {other:?}"),
        }
    }

    #[test]
    fn out_of_domain_scores_are_rejected_with_line_numbers() {
        let examples = small_corpus();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        write_jsonl(&path, &examples).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let doctored: String = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                if i == 1 {
                    l.replacen("\"s_ce\":1.0", "\"s_ce\":1.5", 1)
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        assert_ne!(text.replace('\n', ""), doctored.replace('\n', ""));
        std::fs::write(&path, doctored).unwrap();
        match read_jsonl(&path) {
            Err(DataError::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("s_ce"), "message should name the bad field: {msg}");
            }
            other => panic!("expected validation failure on line 2, got {other:?}"),
        }
    }

    #[test]
    fn blank_lines_are_tolerated() {
        let examples = small_corpus();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        write_jsonl(&path, &examples).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, format!("\n{text}\n\n")).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), examples);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        match read_jsonl(&dir.path().join("absent.jsonl")) {
            Err(DataError::Io(_)) => {}
            other => panic!("expected an io error, got {other:?}"),
        }
    }
}
