//! The append-only CSV audit log of gate passes.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use chrono::{Local, NaiveDate, NaiveDateTime, NaiveTime, Timelike};

use crate::data::OcclusionClass;
use crate::error::{Error, Result};
use crate::reid::gate::MatchResult;

pub const LOG_HEADER: &str = "Date,Time,Person,occlusion,type";
const DATE_FORMAT: &str = "%d-%b-%y";
const TIME_FORMAT: &str = "%-I:%M %p";

pub trait Clock {
    fn now(&self) -> NaiveDateTime;
}

/// Local wall-clock time.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> NaiveDateTime {
        Local::now().naive_local()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub NaiveDateTime);

impl Clock for FixedClock {
    fn now(&self) -> NaiveDateTime {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub date: NaiveDate,
    /// Minute resolution.
    pub time: NaiveTime,
    pub person: String,
    pub occlusion: OcclusionClass,
}

impl LogRecord {
    pub fn new(at: NaiveDateTime, person: &str, occlusion: OcclusionClass) -> Self {
        let t = at.time();
        LogRecord {
            date: at.date(),
            time: NaiveTime::from_hms_opt(t.hour(), t.minute(), 0).expect("valid hour and minute"),
            person: person.to_string(),
            occlusion,
        }
    }

    /// `Yes` for any covering, `No` for a bare face.
    pub fn occlusion_flag(&self) -> &'static str {
        if self.occlusion.is_occluded() {
            "Yes"
        } else {
            "No"
        }
    }

    pub fn fields(&self) -> [String; 5] {
        [
            self.date.format(DATE_FORMAT).to_string(),
            self.time.format(TIME_FORMAT).to_string(),
            self.person.clone(),
            self.occlusion_flag().to_string(),
            self.occlusion.log_type().to_string(),
        ]
    }

    /// One CSV line including the trailing newline.
    pub fn to_csv_line(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.fields()).expect("in-memory csv write");
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 fields")
    }

    pub fn from_fields(f: &[&str]) -> Result<Self> {
        let bad = |m: String| Error::InvalidArgument(format!("log record: {m}"));
        let [date, time, person, flag, kind] = f else {
            return Err(bad(format!("expected 5 fields, got {}", f.len())));
        };
        let occlusion = OcclusionClass::from_log_type(kind).ok_or_else(|| bad(format!("unknown type {kind:?}")))?;
        let rec = LogRecord {
            date: NaiveDate::parse_from_str(date, DATE_FORMAT).map_err(|_| bad(format!("bad date {date:?}")))?,
            time: NaiveTime::parse_from_str(time, "%I:%M %p").map_err(|_| bad(format!("bad time {time:?}")))?,
            person: person.to_string(),
            occlusion,
        };
        if rec.occlusion_flag() != *flag {
            return Err(bad(format!("flag {flag:?} contradicts type {kind:?}")));
        }
        Ok(rec)
    }
}

/// Appends one line for a passed match, writing the header first when the
/// file is new or empty. Each call issues a single write.
pub fn append_log(path: &Path, result: &MatchResult, clock: &dyn Clock) -> Result<LogRecord> {
    if !result.passed {
        return Err(Error::GateNotPassed);
    }
    let rec = LogRecord::new(clock.now(), &result.identifier_person, result.occlusion);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
    let mut buf = String::new();
    if empty {
        buf.push_str(LOG_HEADER);
        buf.push('\n');
    }
    buf.push_str(&rec.to_csv_line());
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(rec)
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    if headers.iter().collect::<Vec<_>>().join(",") != LOG_HEADER {
        return Err(Error::InvalidArgument(format!("{}: unexpected header", path.display())));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        out.push(LogRecord::from_fields(&row.iter().collect::<Vec<_>>())?);
    }
    Ok(out)
}
