use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Task;
use crate::error::{io_err, Error, Result};

/// Low (0) below a mean rating of 5, high (1) otherwise.
pub fn binarize_ava(mean_score: f64) -> Result<u8> {
    if !(1.0..=10.0).contains(&mean_score) {
        return Err(Error::Data(format!("mean score {mean_score} outside [1, 10]")));
    }
    Ok(u8::from(mean_score >= 5.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Synthetic binary label.
    Label(u8),
    /// Mean rating on a 1-10 scale.
    MeanScore(f64),
    /// Real score in `[0, 1]`.
    Score(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Label,
    MeanScore,
    Score,
}

impl Target {
    pub fn kind(&self) -> TargetKind {
        match self {
            Target::Label(_) => TargetKind::Label,
            Target::MeanScore(_) => TargetKind::MeanScore,
            Target::Score(_) => TargetKind::Score,
        }
    }

    /// Binary class; real scores split at 0.5.
    pub fn label(&self) -> Result<u8> {
        match *self {
            Target::Label(l) => Ok(l),
            Target::MeanScore(s) => binarize_ava(s),
            Target::Score(s) => Ok(u8::from(s >= 0.5)),
        }
    }

    /// Raw ground-truth value, used for rank correlation.
    pub fn value(&self) -> f64 {
        match *self {
            Target::Label(l) => l as f64,
            Target::MeanScore(s) | Target::Score(s) => s,
        }
    }

    /// Training target: the binary label when classifying, a `[0, 1]` score
    /// when regressing (mean ratings are mapped linearly from `[1, 10]`).
    pub fn loss_target(&self, task: Task) -> Result<f64> {
        Ok(match (task, *self) {
            (Task::Classify, t) => t.label()? as f64,
            (Task::Regress, Target::MeanScore(s)) => (s - 1.0) / 9.0,
            (Task::Regress, t) => t.value(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// As written in the manifest, relative to the manifest's directory
    /// unless absolute.
    pub path: String,
    pub target: Target,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

impl Line {
    fn into_record(self) -> std::result::Result<Record, String> {
        let target = match (self.label, self.mean_score, self.score) {
            (Some(l), None, None) if l <= 1 => Target::Label(l),
            (Some(l), None, None) => return Err(format!("label {l} is not 0 or 1")),
            (None, Some(s), None) if (1.0..=10.0).contains(&s) => Target::MeanScore(s),
            (None, Some(s), None) => return Err(format!("mean_score {s} outside [1, 10]")),
            (None, None, Some(s)) if (0.0..=1.0).contains(&s) => Target::Score(s),
            (None, None, Some(s)) => return Err(format!("score {s} outside [0, 1]")),
            _ => return Err("exactly one of label, mean_score, score is required".into()),
        };
        if self.path.is_empty() {
            return Err("empty path".into());
        }
        Ok(Record { path: self.path, target })
    }

    fn from_record(r: &Record) -> Self {
        let mut line = Line {
            path: r.path.clone(),
            label: None,
            mean_score: None,
            score: None,
        };
        match r.target {
            Target::Label(l) => line.label = Some(l),
            Target::MeanScore(s) => line.mean_score = Some(s),
            Target::Score(s) => line.score = Some(s),
        }
        line
    }
}

/// Line-delimited JSON records, one image each.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    root: PathBuf,
    records: Vec<Record>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<Record>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            records,
        };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.path.as_str()) {
                return Err(Error::Data(format!("duplicate manifest path {}", r.path)));
            }
        }
        if let Some(first) = self.records.first() {
            if self.records.iter().any(|r| r.target.kind() != first.target.kind()) {
                return Err(Error::Data("manifest mixes target kinds".into()));
            }
        }
        Ok(())
    }

    /// Parses manifest text; relative paths resolve against `root`.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(line)
                .map_err(|e| Error::Data(format!("manifest line {}: {e}", i + 1)))?;
            records.push(
                parsed
                    .into_record()
                    .map_err(|e| Error::Data(format!("manifest line {}: {e}", i + 1)))?,
            );
        }
        Self::new(root, records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(&Line::from_record(r)).expect("manifest line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(io_err(path))
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, r: &Record) -> PathBuf {
        let p = Path::new(&r.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ava_threshold() {
        assert_eq!(binarize_ava(4.99).unwrap(), 0);
        assert_eq!(binarize_ava(5.0).unwrap(), 1);
        assert_eq!(binarize_ava(9.3).unwrap(), 1);
        assert!(binarize_ava(0.5).is_err());
        assert!(binarize_ava(10.5).is_err());
    }

    #[test]
    fn parse_and_reject() {
        let m = Manifest::parse("{\"path\": \"a.ppm\", \"label\": 0}\n\n{\"path\": \"b.ppm\", \"label\": 1}\n", "/d").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.resolve(&m.records()[1]), PathBuf::from("/d/b.ppm"));
        assert!(Manifest::parse(r#"{"path": "a", "label": 0, "extra": 1}"#, ".").is_err());
        assert!(Manifest::parse(r#"{"path": "a", "label": 0, "score": 0.3}"#, ".").is_err());
        assert!(Manifest::parse(r#"{"path": "a"}"#, ".").is_err());
        assert!(Manifest::parse(r#"{"path": "a", "label": 2}"#, ".").is_err());
        let dup = "{\"path\": \"a\", \"label\": 0}\n{\"path\": \"a\", \"label\": 1}";
        assert!(Manifest::parse(dup, ".").is_err());
        let mixed = "{\"path\": \"a\", \"label\": 0}\n{\"path\": \"b\", \"score\": 0.1}";
        assert!(Manifest::parse(mixed, ".").is_err());
    }

    #[test]
    fn targets() {
        assert_eq!(Target::MeanScore(6.2).label().unwrap(), 1);
        assert_eq!(Target::MeanScore(10.0).loss_target(Task::Regress).unwrap(), 1.0);
        assert_eq!(Target::Score(0.63).loss_target(Task::Regress).unwrap(), 0.63);
        assert_eq!(Target::Score(0.63).loss_target(Task::Classify).unwrap(), 1.0);
    }
}
