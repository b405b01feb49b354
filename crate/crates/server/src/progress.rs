//! Per-project progress fan-out for the server-sent event stream.
//!
//! Each project has one watch channel holding its latest progress report.
//! Subscribers diff successive reports and emit only coders whose fraction
//! changed, so a quiet project produces no events.

use std::collections::HashMap;
use std::convert::Infallible;
use std::time::Duration;

use axum::response::sse::{Event, KeepAlive, Sse};
use cqa_core::model::ProjectId;
use cqa_core::service::ProgressReport;
use futures::stream::{self, Stream, StreamExt};
use parking_lot::Mutex;
use serde::Serialize;
use tokio::sync::watch;

#[derive(Default)]
pub struct ProgressHub {
    channels: Mutex<HashMap<ProjectId, watch::Sender<ProgressReport>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgressEvent<'a> {
    pub coder: &'a str,
    pub progress: f64,
    pub version: u64,
}

impl ProgressHub {
    pub fn subscribe(&self, project: &ProjectId, current: ProgressReport) -> watch::Receiver<ProgressReport> {
        let mut channels = self.channels.lock();
        let sender = channels
            .entry(project.clone())
            .or_insert_with(|| watch::channel(current.clone()).0);
        // A fresher report may have been computed by this subscriber.
        sender.send_if_modified(|old| {
            if current.version > old.version {
                *old = current;
                true
            } else {
                false
            }
        });
        sender.subscribe()
    }

    /// Publishes a report; stale or unchanged reports are dropped.
    pub fn publish(&self, project: &ProjectId, report: ProgressReport) {
        if let Some(sender) = self.channels.lock().get(project) {
            sender.send_if_modified(|old| {
                if report.version > old.version {
                    *old = report;
                    true
                } else {
                    false
                }
            });
        }
    }
}

fn changed(previous: &ProgressReport, next: &ProgressReport) -> Vec<Event> {
    previous
        .coders
        .iter()
        .zip(&next.coders)
        .filter(|(a, b)| a.progress != b.progress)
        .map(|(_, b)| {
            Event::default().event("progress").json_data(ProgressEvent {
                coder: b.coder.as_str(),
                progress: b.progress,
                version: next.version,
            })
        })
        .filter_map(Result::ok)
        .collect()
}

/// `snapshot` event with the current report, then `progress` events.
pub fn stream(mut rx: watch::Receiver<ProgressReport>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let first = rx.borrow_and_update().clone();
    let snapshot = Event::default()
        .event("snapshot")
        .json_data(&first)
        .unwrap_or_else(|_| Event::default().event("snapshot"));
    let updates = stream::unfold((rx, first), |(mut rx, last)| async move {
        rx.changed().await.ok()?;
        let next = rx.borrow_and_update().clone();
        let events = changed(&last, &next);
        Some((stream::iter(events), (rx, next)))
    })
    .flatten();
    let events = stream::once(async move { snapshot }).chain(updates).map(Ok);
    Sse::new(events).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}
