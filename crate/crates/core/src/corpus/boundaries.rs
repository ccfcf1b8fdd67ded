//! Cut-point lists for boundary-informed segmentation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted interior cut points for one song, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryList {
    pub song_id: String,
    pub boundaries_sec: Vec<f64>,
}

impl BoundaryList {
    /// Strictly increasing, strictly inside (0, duration).
    pub fn validate(&self, duration_sec: f64) -> Result<()> {
        let mut prev = 0.0f64;
        for b in &self.boundaries_sec {
            if !b.is_finite() || *b <= prev || *b >= duration_sec {
                return Err(Error::Data(format!(
                    "boundary {b} s invalid for song {:?} of {duration_sec:.2} s",
                    self.song_id
                )));
            }
            prev = *b;
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<BoundaryList> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// One labeled section row from an annotation CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub start_sec: f64,
    pub end_sec: f64,
    pub label: String,
}

/// Parses section annotations (CSV rows `start_sec,end_sec,label`), sorted by
/// start time. A single non-numeric header line is tolerated; rows may arrive
/// unsorted.
pub fn read_section_csv(path: &Path) -> Result<Vec<Section>> {
    let text = std::fs::read_to_string(path)?;
    let mut sections = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::Data(format!(
                "{}:{}: expected start_sec,end_sec,label",
                path.display(),
                lineno + 1
            )));
        }
        let parsed: std::result::Result<(f64, f64), _> = fields[0]
            .trim()
            .parse::<f64>()
            .and_then(|s| fields[1].trim().parse::<f64>().map(|e| (s, e)));
        match parsed {
            Ok((start, end)) => {
                if !start.is_finite() || !end.is_finite() || end <= start || start < 0.0 {
                    return Err(Error::Data(format!(
                        "{}:{}: bad section range {start}..{end}",
                        path.display(),
                        lineno + 1
                    )));
                }
                sections.push(Section {
                    start_sec: start,
                    end_sec: end,
                    label: fields.get(2).map(|l| l.trim().to_string()).unwrap_or_default(),
                });
            }
            Err(_) if lineno == 0 => continue, // header
            Err(e) => {
                return Err(Error::Data(format!(
                    "{}:{}: {e}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    sections.sort_by(|a, b| a.start_sec.partial_cmp(&b.start_sec).expect("finite starts"));
    Ok(sections)
}

/// Section annotations as cut points: every section start except time zero.
pub fn boundaries_from_section_csv(path: &Path, song_id: &str) -> Result<BoundaryList> {
    let mut starts: Vec<f64> = read_section_csv(path)?.into_iter().map(|s| s.start_sec).collect();
    starts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let boundaries_sec: Vec<f64> = starts.into_iter().filter(|s| *s > 1e-9).collect();
    Ok(BoundaryList {
        song_id: song_id.to_string(),
        boundaries_sec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn validation_rules() {
        let b = BoundaryList {
            song_id: "s".into(),
            boundaries_sec: vec![2.0, 5.0, 9.0],
        };
        assert!(b.validate(10.0).is_ok());
        assert!(b.validate(8.0).is_err()); // 9 beyond duration
        let unsorted = BoundaryList {
            song_id: "s".into(),
            boundaries_sec: vec![5.0, 2.0],
        };
        assert!(unsorted.validate(10.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("song.boundaries.json");
        let b = BoundaryList {
            song_id: "abc".into(),
            boundaries_sec: vec![1.5, 3.25],
        };
        b.write_json(&p).unwrap();
        assert_eq!(BoundaryList::read_json(&p).unwrap(), b);
    }

    #[test]
    fn section_rows_sort_and_keep_labels() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("song.csv");
        std::fs::write(&p, "8.0,16.0,chorus\n0.0,8.0,intro\n16.0,24.0,outro\n").unwrap();
        let sections = read_section_csv(&p).unwrap();
        assert_eq!(sections.len(), 3);
        assert_eq!(sections[0].start_sec, 0.0);
        assert_eq!(sections[0].label, "intro");
        assert_eq!(sections[2].end_sec, 24.0);
        assert_eq!(sections[2].label, "outro");
    }

    #[test]
    fn section_csv_becomes_interior_starts() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("song.csv");
        std::fs::write(&p, "8.0,16.0,chorus\n0.0,8.0,intro\n16.0,24.0,outro\n").unwrap();
        let b = boundaries_from_section_csv(&p, "song").unwrap();
        assert_eq!(b.boundaries_sec, vec![8.0, 16.0]);
    }

    #[test]
    fn header_line_is_tolerated() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("song.csv");
        std::fs::write(&p, "start,end,label\n0.0,5.0,a\n5.0,12.0,b\n").unwrap();
        let b = boundaries_from_section_csv(&p, "song").unwrap();
        assert_eq!(b.boundaries_sec, vec![5.0]);
    }

    #[test]
    fn malformed_row_is_an_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("song.csv");
        std::fs::write(&p, "0.0,5.0,a\noops,bad,c\n").unwrap();
        assert!(boundaries_from_section_csv(&p, "song").is_err());
        std::fs::write(&p, "0.0,5.0,a\n7.0,6.0,c\n").unwrap();
        assert!(boundaries_from_section_csv(&p, "song").is_err());
    }
}
