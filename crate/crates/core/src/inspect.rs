//! Read-only views of the control-plane tables: task and object listings and
//! the event timeline, as aligned text or CSV.

use crate::control::{ObjectTableEntry, TaskTableEntry};
use crate::driver::Driver;
use crate::error::ApiError;
use crate::ids::TaskId;
use crate::message::Table;
use crate::task::{EventRecord, Subject, TaskState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Text,
    Csv,
}

/// A header row plus data rows, rendered on demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rows {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Rows {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut out = self.header.join(",");
                out.push('\n');
                for r in &self.rows {
                    let cells: Vec<String> = r.iter().map(|c| csv_cell(c)).collect();
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
                out
            }
            Format::Text => {
                let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
                for r in &self.rows {
                    for (w, c) in widths.iter_mut().zip(r) {
                        *w = (*w).max(c.len());
                    }
                }
                let line = |cells: Vec<&str>| {
                    let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                    padded.join("  ").trim_end().to_owned() + "\n"
                };
                let mut out = line(self.header.clone());
                for r in &self.rows {
                    out.push_str(&line(r.iter().map(String::as_str).collect()));
                }
                out
            }
        }
    }
}

fn csv_cell(c: &str) -> String {
    if c.contains([',', '"', '\n']) {
        format!("\"{}\"", c.replace('"', "\"\""))
    } else {
        c.to_owned()
    }
}

fn state_text(s: &TaskState) -> String {
    match s.node() {
        Some(n) => format!("{}@{n}", s.kind().name()),
        None => s.kind().name().to_owned(),
    }
}

pub fn task_rows(entries: &[TaskTableEntry]) -> Rows {
    let mut sorted: Vec<&TaskTableEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| e.task_id);
    Rows {
        header: vec!["task_id", "function", "state", "node", "num_returns", "demand"],
        rows: sorted
            .into_iter()
            .map(|e| {
                vec![
                    e.task_id.to_hex(),
                    e.spec.function_name.clone(),
                    state_text(&e.state),
                    e.node.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
                    e.spec.num_returns.to_string(),
                    e.spec.resource_demand.to_string(),
                ]
            })
            .collect(),
    }
}

pub fn object_rows(entries: &[ObjectTableEntry]) -> Rows {
    let mut sorted: Vec<&ObjectTableEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| e.object_id);
    Rows {
        header: vec!["object_id", "size_bytes", "locations", "creating_task", "lost"],
        rows: sorted
            .into_iter()
            .map(|e| {
                let locs: Vec<String> = e.locations.iter().map(|n| n.to_string()).collect();
                vec![
                    e.object_id.to_hex(),
                    e.size_bytes.to_string(),
                    if locs.is_empty() { "-".into() } else { locs.join(";") },
                    e.creating_task.map(|t| t.to_hex()).unwrap_or_else(|| "-".into()),
                    e.lost.to_string(),
                ]
            })
            .collect(),
    }
}

/// Timeline rows in timestamp order. The sort is stable, so events with
/// equal timestamps keep their log order.
pub fn timeline_rows(events: &[EventRecord], task: Option<TaskId>) -> Rows {
    let mut sorted: Vec<&EventRecord> =
        events.iter().filter(|e| task.is_none_or(|t| e.subject == Subject::Task(t))).collect();
    sorted.sort_by_key(|e| e.timestamp);
    Rows {
        header: vec!["timestamp_us", "subject", "transition", "node"],
        rows: sorted
            .into_iter()
            .map(|e| {
                vec![
                    e.timestamp.to_string(),
                    e.subject.to_string(),
                    e.transition.clone(),
                    if e.node_id.is_empty() { "-".into() } else { e.node_id.clone() },
                ]
            })
            .collect(),
    }
}

pub fn tasks(driver: &Driver) -> Result<Vec<TaskTableEntry>, ApiError> {
    driver.scan_table(Table::Task)?.iter().map(|r| Ok(TaskTableEntry::decode(r)?)).collect()
}

pub fn objects(driver: &Driver) -> Result<Vec<ObjectTableEntry>, ApiError> {
    driver.scan_table(Table::Object)?.iter().map(|r| Ok(ObjectTableEntry::decode(r)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{derive_task_id, NodeId, ObjectId};
    use crate::task::{Resources, TaskSpec};
    use std::collections::BTreeSet;

    #[test]
    fn renders_aligned_and_csv() {
        let rows = Rows { header: vec!["a", "bb"], rows: vec![vec!["xyz".into(), "1".into()], vec!["q,r".into(), "".into()]] };
        assert_eq!(rows.render(Format::Text), "a    bb\nxyz  1\nq,r\n");
        assert_eq!(rows.render(Format::Csv), "a,bb\nxyz,1\n\"q,r\",\n");
    }

    #[test]
    fn task_and_object_listings_sort_by_id() {
        let t = |i| {
            let spec = TaskSpec::new(derive_task_id(&TaskId::default(), i), "f", vec![], 1, Resources::cpu(1));
            TaskTableEntry { task_id: spec.task_id, spec, state: TaskState::Done, node: Some(NodeId(1)) }
        };
        let rows = task_rows(&[t(2), t(1), t(0)]);
        let mut ids: Vec<&String> = rows.rows.iter().map(|r| &r[0]).collect();
        let sorted = {
            let mut s = ids.clone();
            s.sort();
            s
        };
        assert_eq!(ids, sorted);
        ids.dedup();
        assert_eq!(ids.len(), 3);
        assert!(rows.rows.iter().all(|r| r[2] == "DONE"));

        let o = ObjectTableEntry {
            object_id: ObjectId([1; 16]),
            locations: BTreeSet::from([NodeId(0), NodeId(2)]),
            creating_task: None,
            size_bytes: 9,
            lost: false,
        };
        assert_eq!(object_rows(&[o]).rows[0][2], "node-0000;node-0002");
    }

    #[test]
    fn timeline_filter() {
        let a = derive_task_id(&TaskId::default(), 0);
        let b = derive_task_id(&TaskId::default(), 1);
        let ev = |ts, t, tr: &str| EventRecord { timestamp: ts, subject: Subject::Task(t), transition: tr.into(), node_id: String::new() };
        let events = vec![ev(3, a, "DONE"), ev(1, a, "SUBMITTED"), ev(2, b, "SUBMITTED")];
        let rows = timeline_rows(&events, Some(a));
        assert_eq!(rows.len(), 2);
        assert_eq!(rows.rows[0][2], "SUBMITTED");
        assert_eq!(rows.rows[1][2], "DONE");
    }
}
