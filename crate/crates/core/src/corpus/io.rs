use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_corpus, EcCandidate, FunctionalUnit, Narrative, ValenceLabel};
use crate::{Error, Result};

/// One line of a corpus file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitRecord {
    narrative_id: String,
    subject_id: String,
    unit_id: String,
    tokens: Vec<String>,
    valence: ValenceLabel,
    candidates: Vec<EcCandidate>,
}

/// Parses line-delimited unit records. Consecutive records sharing a
/// `narrative_id` form one narrative.
pub fn parse_corpus(text: &str) -> Result<Vec<Narrative>> {
    let mut narratives: Vec<Narrative> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: UnitRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let unit = FunctionalUnit {
            unit_id: rec.unit_id,
            narrative_id: rec.narrative_id.clone(),
            tokens: rec.tokens,
            valence: rec.valence,
            candidates: rec.candidates,
        };
        match narratives.last_mut() {
            Some(n) if n.narrative_id == rec.narrative_id => {
                if n.subject_id != rec.subject_id {
                    return Err(Error::validation(
                        &unit.unit_id,
                        format!(
                            "subject_id `{}` differs from narrative subject `{}`",
                            rec.subject_id, n.subject_id
                        ),
                    ));
                }
                n.units.push(unit);
            }
            _ => narratives.push(Narrative {
                narrative_id: rec.narrative_id,
                subject_id: rec.subject_id,
                units: vec![unit],
            }),
        }
    }
    validate_corpus(&narratives)?;
    Ok(narratives)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Narrative>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

/// Serializes narratives to the line-delimited record format.
pub fn render_corpus(narratives: &[Narrative]) -> Result<String> {
    validate_corpus(narratives)?;
    let mut out = String::new();
    for n in narratives {
        for u in &n.units {
            let rec = UnitRecord {
                narrative_id: n.narrative_id.clone(),
                subject_id: n.subject_id.clone(),
                unit_id: u.unit_id.clone(),
                tokens: u.tokens.clone(),
                valence: u.valence,
                candidates: u.candidates.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("unit record serializes"));
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn save_corpus(narratives: &[Narrative], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render_corpus(narratives)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_UNITS: &str = r#"{"narrative_id":"n1","subject_id":"s1","unit_id":"u1","tokens":["I","met","my","boss"],"valence":"negative","candidates":[{"start":1,"end":2,"carrier":"no"},{"start":2,"end":4,"carrier":"yes"}]}
{"narrative_id":"n1","subject_id":"s1","unit_id":"u2","tokens":["then","lunch"],"valence":"neutral","candidates":[{"start":1,"end":2,"carrier":"no"}]}
"#;

    #[test]
    fn parses_one_narrative_with_two_units() {
        let corpus = parse_corpus(TWO_UNITS).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[0].units.len(), 2);
        assert_eq!(render_corpus(&corpus).unwrap(), TWO_UNITS);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(parse_corpus("").unwrap().is_empty());
        assert_eq!(render_corpus(&[]).unwrap(), "");
    }

    #[test]
    fn malformed_record_names_line() {
        let text = format!("{}{{\"narrative_id\": 3}}\n", TWO_UNITS);
        match parse_corpus(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn neutral_carrier_fails_validation() {
        let text = r#"{"narrative_id":"n1","subject_id":"s1","unit_id":"bad","tokens":["x"],"valence":"neutral","candidates":[{"start":0,"end":1,"carrier":"yes"}]}"#;
        match parse_corpus(text) {
            Err(Error::Validation { unit_id, invariant }) => {
                assert_eq!(unit_id, "bad");
                assert!(invariant.contains("neutral valence implies no emotion carrier"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn non_contiguous_narrative_is_duplicate() {
        let a = r#"{"narrative_id":"n1","subject_id":"s1","unit_id":"u1","tokens":["x"],"valence":"neutral","candidates":[]}"#;
        let b = r#"{"narrative_id":"n2","subject_id":"s1","unit_id":"u2","tokens":["x"],"valence":"neutral","candidates":[]}"#;
        let c = r#"{"narrative_id":"n1","subject_id":"s1","unit_id":"u3","tokens":["x"],"valence":"neutral","candidates":[]}"#;
        assert!(parse_corpus(&format!("{a}\n{b}\n{c}\n")).is_err());
    }

    #[test]
    fn unicode_tokens_save_identically_twice() {
        let text = r#"{"narrative_id":"n1","subject_id":"s1","unit_id":"u1","tokens":["perché","è","già","🙂"],"valence":"positive","candidates":[{"start":3,"end":4,"carrier":"yes"}]}
"#;
        let corpus = parse_corpus(text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        save_corpus(&corpus, &p1).unwrap();
        let reloaded = load_corpus(&p1).unwrap();
        assert_eq!(reloaded, corpus);
        save_corpus(&reloaded, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("missing").join("x.jsonl");
        assert!(matches!(save_corpus(&[], bad), Err(Error::Io { .. })));
    }
}
