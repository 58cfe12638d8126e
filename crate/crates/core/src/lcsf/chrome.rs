//! Chrome trace-event export (`chrome://tracing`, Perfetto).

use serde_json::{json, Value};

use super::timed::{Span, SpanKind, Timeline};

fn name(span: &Span) -> String {
    match (span.kind, span.cause) {
        (SpanKind::Stall, Some(cause)) => format!("stall:{}", serde_json::to_value(cause).unwrap_or_default().as_str().unwrap_or("")),
        (kind, _) => serde_json::to_value(kind).unwrap_or_default().as_str().unwrap_or("").to_string(),
    }
}

fn complete_event(span: &Span, tid: usize) -> Value {
    let mut args = serde_json::Map::new();
    if let Some(t) = span.task {
        args.insert("task".into(), json!(t));
    }
    if let Some(i) = span.iter {
        args.insert("iter".into(), json!(i));
    }
    json!({
        "name": name(span),
        "cat": if span.kind == SpanKind::Stall { "stall" } else { "work" },
        "ph": "X",
        "ts": span.start * 1e6,
        "dur": (span.end - span.start) * 1e6,
        "pid": 0,
        "tid": tid,
        "args": Value::Object(args),
    })
}

fn thread_name(tid: usize, name: &str) -> Value {
    json!({"name": "thread_name", "ph": "M", "pid": 0, "tid": tid, "args": {"name": name}})
}

/// Trace events with timestamps in microseconds, one track per worker plus
/// one for asynchronous copies.
pub fn chrome_trace(timeline: &Timeline) -> Value {
    let mut events = Vec::new();
    for (tid, w) in timeline.workers.iter().enumerate() {
        events.push(thread_name(tid, &w.worker.to_string()));
        events.extend(w.spans.iter().map(|s| complete_event(s, tid)));
    }
    let copy_tid = timeline.workers.len();
    if !timeline.async_ops.is_empty() {
        events.push(thread_name(copy_tid, "async copies"));
        events.extend(timeline.async_ops.iter().map(|s| complete_event(s, copy_tid)));
    }
    json!({ "traceEvents": events, "displayTimeUnit": "ns" })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcsf::{simulate_timed, LatencyProfile, PipelineConfig, SimOptions, Workload};

    #[test]
    fn exports_complete_events_in_microseconds() {
        let tl = simulate_timed(
            &Workload::single_task(3),
            &PipelineConfig::lcsf(1, 1, 2),
            &LatencyProfile::new(2e-6, 1e-6),
            &SimOptions::default(),
        )
        .unwrap();
        let v = chrome_trace(&tl);
        let events = v["traceEvents"].as_array().unwrap();
        let compute: Vec<_> = events.iter().filter(|e| e["name"] == "compute").collect();
        assert_eq!(compute.len(), 3);
        assert!((compute[0]["ts"].as_f64().unwrap() - 2.0).abs() < 1e-9);
        assert!((compute[0]["dur"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        assert!(events.iter().any(|e| e["name"] == "stall:input_wait"));
    }
}
