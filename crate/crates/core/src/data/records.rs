use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};

use super::window::{Labels, Task, CHANNELS, SAMPLE_PERIOD_SECS};
use crate::error::{Error, Result};

/// One participant's regularly sampled trace. Missing samples are `NaN`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticipantRecord {
    pub participant_id: String,
    /// Unix seconds of the first sample.
    pub start: i64,
    /// One series per entry of [`CHANNELS`], all of equal length.
    pub channels: Vec<Vec<f64>>,
    pub labels: Labels,
}

impl ParticipantRecord {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn missing_count(&self) -> usize {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .filter(|v| v.is_nan())
            .count()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParseReport {
    pub records: Vec<ParticipantRecord>,
    /// Participants whose rows were not already in time order.
    pub reordered_participants: usize,
    /// Empty value cells plus grid slots with no row at all.
    pub missing_cells: usize,
    pub warnings: Vec<String>,
}

pub const LABEL_COLUMNS: [&str; 5] = [
    "sleep_apnea",
    "diabetes",
    "insomnia",
    "hypertension",
    "metabolic_syndrome",
];

fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .ok()
        .map(|t| t.and_utc().timestamp())
}

pub fn format_timestamp(unix: i64) -> String {
    DateTime::<Utc>::from_timestamp(unix, 0)
        .expect("timestamp in range")
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing column {name:?}"),
        })
}

/// Reads the labels file: `participant_id` plus one integer code column per task.
pub fn parse_labels_csv(path: &Path) -> Result<BTreeMap<String, Labels>> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let id_col = column_index(&headers, "participant_id", path)?;
    let cols = LABEL_COLUMNS
        .iter()
        .map(|c| column_index(&headers, c, path))
        .collect::<Result<Vec<_>>>()?;
    let mut labels = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let id = row.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(bad("empty participant_id".into()));
        }
        let mut l = Labels::default();
        for (task, &col) in Task::ALL.iter().zip(&cols) {
            let cell = row.get(col).unwrap_or("");
            let code: usize = cell
                .parse()
                .map_err(|_| bad(format!("{} code {cell:?} is not an integer", task.name())))?;
            if code >= task.n_classes() {
                return Err(bad(format!(
                    "{} code {code} outside 0..{}",
                    task.name(),
                    task.n_classes()
                )));
            }
            l.set(*task, code);
        }
        if labels.insert(id.clone(), l).is_some() {
            return Err(bad(format!("duplicate participant {id:?}")));
        }
    }
    Ok(labels)
}

struct Row {
    line: usize,
    time: i64,
    values: [f64; 3],
}

/// Reads an actigraphy CSV (`participant_id, timestamp, activity, light,
/// sleep_wake`) and joins it with the labels file.
///
/// Rows are grouped per participant, sorted by time and laid onto the 30 s
/// grid starting at each participant's first timestamp; empty cells and grid
/// slots without a row become `NaN`. Participants absent from the labels file
/// are dropped with a warning, as are label rows with no trace.
pub fn parse_actigraphy_csv(path: &Path, labels_path: &Path) -> Result<ParseReport> {
    let labels = parse_labels_csv(labels_path)?;
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let id_col = column_index(&headers, "participant_id", path)?;
    let time_col = column_index(&headers, "timestamp", path)?;
    let value_cols = CHANNELS
        .iter()
        .map(|c| column_index(&headers, c, path))
        .collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    let mut missing_cells = 0;
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let id = row.get(id_col).unwrap_or("");
        if id.is_empty() {
            return Err(bad("empty participant_id".into()));
        }
        let stamp = row.get(time_col).unwrap_or("");
        let time = parse_timestamp(stamp).ok_or_else(|| bad(format!("bad timestamp {stamp:?}")))?;
        let mut values = [f64::NAN; 3];
        for (c, &col) in value_cols.iter().enumerate() {
            let cell = row.get(col).unwrap_or("");
            if cell.is_empty() {
                missing_cells += 1;
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| bad(format!("{} value {cell:?} is not a number", CHANNELS[c])))?;
            let valid = if c == 2 {
                v == 0.0 || v == 1.0
            } else {
                v.is_finite() && v >= 0.0
            };
            if !valid {
                return Err(bad(format!("{} value {v} out of range", CHANNELS[c])));
            }
            values[c] = v;
        }
        groups
            .entry(id.to_string())
            .or_default()
            .push(Row { line, time, values });
    }

    let mut report = ParseReport::default();
    for (id, mut rows) in groups {
        if !rows.windows(2).all(|w| w[0].time <= w[1].time) {
            report.reordered_participants += 1;
            rows.sort_by_key(|r| r.time);
        }
        let start = rows[0].time;
        let end = rows[rows.len() - 1].time;
        let slots = ((end - start) / SAMPLE_PERIOD_SECS + 1) as usize;
        let mut channels = vec![vec![f64::NAN; slots]; CHANNELS.len()];
        let mut filled = vec![false; slots];
        for r in &rows {
            let offset = r.time - start;
            if offset % SAMPLE_PERIOD_SECS != 0 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: r.line,
                    message: format!("timestamp is off the {SAMPLE_PERIOD_SECS} s grid"),
                });
            }
            let slot = (offset / SAMPLE_PERIOD_SECS) as usize;
            if std::mem::replace(&mut filled[slot], true) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: r.line,
                    message: format!("duplicate timestamp for participant {id:?}"),
                });
            }
            for (c, v) in r.values.iter().enumerate() {
                channels[c][slot] = *v;
            }
        }
        let absent = filled.iter().filter(|f| !**f).count();
        missing_cells += absent * CHANNELS.len();
        match labels.get(&id) {
            Some(l) => report.records.push(ParticipantRecord {
                participant_id: id,
                start,
                channels,
                labels: *l,
            }),
            None => report
                .warnings
                .push(format!("participant {id:?} has no labels; excluded")),
        }
    }
    let seen: BTreeSet<&str> = report
        .records
        .iter()
        .map(|r| r.participant_id.as_str())
        .collect();
    for id in labels.keys() {
        if !seen.contains(id.as_str()) && !report.warnings.iter().any(|w| w.contains(id.as_str())) {
            report
                .warnings
                .push(format!("labels file names unknown participant {id:?}"));
        }
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    report.missing_cells = missing_cells;
    Ok(report)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn fmt_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Writes records in the format read by [`parse_actigraphy_csv`].
pub fn write_actigraphy_csv(records: &[ParticipantRecord], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "participant_id,timestamp,{}", CHANNELS.join(",")).map_err(io)?;
    for r in records {
        for t in 0..r.len() {
            let stamp = format_timestamp(r.start + t as i64 * SAMPLE_PERIOD_SECS);
            write!(out, "{},{stamp}", r.participant_id).map_err(io)?;
            for c in &r.channels {
                write!(out, ",{}", fmt_cell(c[t])).map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn write_labels_csv(records: &[ParticipantRecord], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "participant_id,{}", LABEL_COLUMNS.join(",")).map_err(io)?;
    for r in records {
        let codes: Vec<String> = Task::ALL
            .iter()
            .map(|&t| r.labels.get(t).to_string())
            .collect();
        writeln!(out, "{},{}", r.participant_id, codes.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const LABELS: &str = "participant_id,sleep_apnea,diabetes,insomnia,hypertension,metabolic_syndrome\nA,0,2,1,1,0\n";

    #[test]
    fn header_only_file_gives_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let acti = write(
            dir.path(),
            "a.csv",
            "participant_id,timestamp,activity,light,sleep_wake\n",
        );
        let labels = write(
            dir.path(),
            "l.csv",
            "participant_id,sleep_apnea,diabetes,insomnia,hypertension,metabolic_syndrome\n",
        );
        let report = parse_actigraphy_csv(&acti, &labels).unwrap();
        assert!(report.records.is_empty());
    }

    #[test]
    fn out_of_order_rows_are_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let acti = write(
            dir.path(),
            "a.csv",
            "participant_id,timestamp,activity,light,sleep_wake\n\
             A,2024-01-01T00:00:30Z,5,10,1\n\
             A,2024-01-01T00:00:00Z,3,20,0\n",
        );
        let labels = write(dir.path(), "l.csv", LABELS);
        let report = parse_actigraphy_csv(&acti, &labels).unwrap();
        assert_eq!(report.reordered_participants, 1);
        let r = &report.records[0];
        assert_eq!(r.channels[0], vec![3.0, 5.0]);
        assert_eq!(r.channels[1], vec![20.0, 10.0]);
        assert_eq!(r.labels.get(Task::Diabetes), 2);
    }

    #[test]
    fn missing_cell_and_missing_slot_become_nan() {
        let dir = tempfile::tempdir().unwrap();
        let acti = write(
            dir.path(),
            "a.csv",
            "participant_id,timestamp,activity,light,sleep_wake\n\
             A,2024-01-01T00:00:00Z,3,20,0\n\
             A,2024-01-01T00:00:30Z,,20,0\n\
             A,2024-01-01T00:01:30Z,1,20,0\n",
        );
        let labels = write(dir.path(), "l.csv", LABELS);
        let report = parse_actigraphy_csv(&acti, &labels).unwrap();
        assert_eq!(report.missing_cells, 1 + 3);
        let r = &report.records[0];
        assert_eq!(r.len(), 4);
        assert!(r.channels[0][1].is_nan() && r.channels[0][2].is_nan());
    }

    #[test]
    fn malformed_row_reports_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let acti = write(
            dir.path(),
            "a.csv",
            "participant_id,timestamp,activity,light,sleep_wake\n\
             A,2024-01-01T00:00:00Z,3,20,0\n\
             A,2024-01-01T00:00:30Z,abc,20,0\n",
        );
        let labels = write(dir.path(), "l.csv", LABELS);
        match parse_actigraphy_csv(&acti, &labels) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_participant_is_a_warning() {
        let dir = tempfile::tempdir().unwrap();
        let acti = write(
            dir.path(),
            "a.csv",
            "participant_id,timestamp,activity,light,sleep_wake\nA,2024-01-01T00:00:00Z,3,20,0\n",
        );
        let labels = write(dir.path(), "l.csv", &format!("{LABELS}B,1,0,0,0,1\n"));
        let report = parse_actigraphy_csv(&acti, &labels).unwrap();
        assert_eq!(report.records.len(), 1);
        assert!(report.warnings.iter().any(|w| w.contains("\"B\"")));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let record = ParticipantRecord {
            participant_id: "X1".into(),
            start: 1_704_067_200,
            channels: vec![
                vec![1.5, f64::NAN, 0.25],
                vec![100.0, 3.0, 0.0],
                vec![1.0, 0.0, 1.0],
            ],
            labels: Labels([1, 2, 0, 1, 1]),
        };
        let a = dir.path().join("a.csv");
        let l = dir.path().join("l.csv");
        write_actigraphy_csv(std::slice::from_ref(&record), &a).unwrap();
        write_labels_csv(std::slice::from_ref(&record), &l).unwrap();
        let back = parse_actigraphy_csv(&a, &l).unwrap();
        let r = &back.records[0];
        assert_eq!(r.participant_id, "X1");
        assert_eq!(r.start, record.start);
        assert_eq!(r.labels, record.labels);
        assert!(r.channels[0][1].is_nan());
        assert_eq!(r.channels[1], record.channels[1]);
        assert_eq!(back.missing_cells, 1);
    }
}
