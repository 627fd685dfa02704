use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One user as stored in the JSONL corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(default)]
    pub tweets: Vec<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub profile_location: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub user_language: String,
    #[serde(default)]
    pub time_zone: String,
    #[serde(rename = "lat")]
    pub latitude: f64,
    #[serde(rename = "lon")]
    pub longitude: f64,
    #[serde(rename = "city", default, skip_serializing_if = "Option::is_none")]
    pub gold_city: Option<String>,
}

impl UserRecord {
    /// Tweets first, then description, profile location and name.
    pub fn text_fields(&self) -> impl Iterator<Item = &str> {
        self.tweets
            .iter()
            .map(String::as_str)
            .chain([self.description.as_str(), self.profile_location.as_str(), self.name.as_str()])
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(("lat", format!("latitude {} outside [-90, 90]", self.latitude)));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(("lon", format!("longitude {} outside [-180, 180]", self.longitude)));
        }
        Ok(())
    }
}

/// Streams records from a JSONL file in file order.
pub struct DatasetReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> DatasetReader<R> {
    pub fn new(reader: R) -> Self {
        DatasetReader { lines: reader.lines(), line: 0 }
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = Result<UserRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let raw = match self.lines.next()? {
                Ok(raw) => raw,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if raw.trim().is_empty() {
                continue;
            }
            let line = self.line;
            let parsed = serde_json::from_str::<UserRecord>(&raw).map_err(|e| Error::Ingest {
                line,
                message: e.to_string(),
            });
            return Some(parsed.and_then(|rec| {
                rec.validate().map_err(|(field, message)| Error::Ingest {
                    line,
                    message: format!("field `{field}`: {message}"),
                })?;
                Ok(rec)
            }));
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetReader<BufReader<File>>> {
    Ok(DatasetReader::new(BufReader::new(File::open(path)?)))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<UserRecord>> {
    load_dataset(path)?.collect()
}

pub fn write_dataset(path: impl AsRef<Path>, users: &[UserRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for u in users {
        serde_json::to_writer(&mut w, u)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"user_id":"a","tweets":["hi"],"description":"","profile_location":"","name":"A","user_language":"en","time_zone":"x","lat":1.0,"lon":2.0,"city":"c1"}
{"user_id":"b","tweets":[],"description":"d","profile_location":"","name":"","user_language":"","lat":-3.5,"lon":100.0,"city":"c2"}
{"user_id":"c","tweets":["a","b"],"lat":0.0,"lon":0.0}
"#;

    fn read(s: &str) -> Vec<Result<UserRecord>> {
        DatasetReader::new(s.as_bytes()).collect()
    }

    #[test]
    fn reads_three_records_in_order() {
        let recs: Vec<UserRecord> = read(GOOD).into_iter().collect::<Result<_>>().unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].user_id, "a");
        assert_eq!(recs[1].time_zone, "");
        assert_eq!(recs[2].gold_city, None);
    }

    #[test]
    fn latitude_out_of_range_is_rejected() {
        let bad = r#"{"user_id":"a","lat":95.0,"lon":0.0}"#;
        let err = read(bad).pop().unwrap().unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("lat"), "{err}");
    }

    #[test]
    fn schema_violation_names_line_and_field() {
        let bad = format!("{}\n{{\"user_id\":\"z\",\"lon\":0.0}}\n", GOOD.lines().next().unwrap());
        let res = read(&bad);
        assert!(res[0].is_ok());
        let err = res[1].as_ref().unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("lat"), "{err}");
    }

    #[test]
    fn write_then_read_round_trips() {
        let recs: Vec<UserRecord> = read(GOOD).into_iter().collect::<Result<_>>().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&p, &recs).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), recs);
    }
}
