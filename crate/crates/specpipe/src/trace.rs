//! Simulation trace documents: JSON, CSV and the chrome trace viewer format.
//!
//! Times are seconds rounded to the microsecond. Rows are sorted by start
//! time, then resource, then the remaining fields.

use serde::{Deserialize, Serialize};
use serde_json::json;
use specpipe_core::simulator::{Label, Resource, SimEvent};

pub const CSV_HEADER: [&str; 7] = ["resource", "label", "batch", "layer", "round", "start_s", "end_s"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRow {
    pub resource: Resource,
    pub label: Label,
    pub batch: Option<u8>,
    pub layer: Option<u32>,
    pub round: u64,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceDoc {
    pub events: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TraceFormat {
    Json,
    Csv,
    Chrome,
}

impl TraceFormat {
    pub fn file_name(&self) -> &'static str {
        match self {
            TraceFormat::Json => "trace.json",
            TraceFormat::Csv => "trace.csv",
            TraceFormat::Chrome => "trace.chrome.json",
        }
    }
}

fn micros(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

fn row_order(a: &TraceRow, b: &TraceRow) -> std::cmp::Ordering {
    a.start_s
        .total_cmp(&b.start_s)
        .then(a.resource.cmp(&b.resource))
        .then(a.end_s.total_cmp(&b.end_s))
        .then(a.label.cmp(&b.label))
        .then(a.batch.cmp(&b.batch))
        .then(a.layer.cmp(&b.layer))
        .then(a.round.cmp(&b.round))
}

impl TraceDoc {
    pub fn from_events(events: &[SimEvent]) -> Self {
        let mut rows: Vec<TraceRow> = events
            .iter()
            .map(|e| TraceRow {
                resource: e.resource,
                label: e.label,
                batch: e.batch,
                layer: e.layer,
                round: e.round,
                start_s: micros(e.start),
                end_s: micros(e.end),
            })
            .collect();
        rows.sort_by(row_order);
        TraceDoc { events: rows }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trace serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.events {
            w.write_record([
                r.resource.as_str().to_string(),
                r.label.as_str().to_string(),
                opt(r.batch.map(|b| b.to_string())),
                opt(r.layer.map(|l| l.to_string())),
                r.round.to_string(),
                format!("{:.6}", r.start_s),
                format!("{:.6}", r.end_s),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Complete ("X") events in microseconds, one thread per resource.
    pub fn to_chrome(&self) -> String {
        let mut events: Vec<serde_json::Value> = Resource::ALL
            .iter()
            .enumerate()
            .map(|(i, r)| {
                json!({"name": "thread_name", "ph": "M", "pid": 0, "tid": i, "args": {"name": r.as_str()}})
            })
            .collect();
        for r in &self.events {
            let tid = Resource::ALL.iter().position(|x| *x == r.resource).unwrap_or(0);
            let ts = (r.start_s * 1e6).round() as u64;
            let dur = ((r.end_s - r.start_s) * 1e6).round() as u64;
            events.push(json!({
                "name": r.label.as_str(),
                "cat": r.resource.as_str(),
                "ph": "X",
                "ts": ts,
                "dur": dur,
                "pid": 0,
                "tid": tid,
                "args": {"batch": r.batch, "layer": r.layer, "round": r.round},
            }));
        }
        let mut s = serde_json::to_string_pretty(&json!({"traceEvents": events, "displayTimeUnit": "ms"}))
            .expect("trace serializes");
        s.push('\n');
        s
    }

    pub fn render(&self, format: TraceFormat) -> String {
        match format {
            TraceFormat::Json => self.to_json(),
            TraceFormat::Csv => self.to_csv(),
            TraceFormat::Chrome => self.to_chrome(),
        }
    }
}
