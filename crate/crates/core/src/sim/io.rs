//! Line-delimited dataset files.
//!
//! Organic sessions are written one view event per line as
//! `{"user_id":..,"t":..,"item_id":..}`; bandit logs one record per line as
//! `{"user_id":..,"n":..,"action":..,"click":..,"propensity":..}`. Histories
//! are not duplicated into the bandit file; readers rebuild them by joining
//! on `user_id` against the organic sessions.

use super::{BanditRecord, OrganicSession};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct OrganicEventLine {
    user_id: u64,
    t: u32,
    item_id: u32,
}

#[derive(Serialize, Deserialize)]
struct BanditRecordLine {
    user_id: u64,
    n: u32,
    action: u32,
    click: u8,
    propensity: f64,
}

pub fn write_organic_sessions(path: &Path, sessions: &[OrganicSession]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for s in sessions {
        for (t, &item_id) in s.items.iter().enumerate() {
            let line = OrganicEventLine { user_id: s.user_id, t: t as u32, item_id };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_organic_sessions(path: &Path) -> Result<Vec<OrganicSession>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut by_user: BTreeMap<u64, Vec<(u32, u32)>> = BTreeMap::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: OrganicEventLine = serde_json::from_str(&line)?;
        by_user.entry(ev.user_id).or_default().push((ev.t, ev.item_id));
    }
    Ok(by_user
        .into_iter()
        .map(|(user_id, mut events)| {
            events.sort_by_key(|&(t, _)| t);
            OrganicSession { user_id, items: events.into_iter().map(|(_, v)| v).collect() }
        })
        .collect())
}

pub fn write_bandit_log(path: &Path, records: &[BanditRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let line = BanditRecordLine {
            user_id: r.user_id,
            n: r.n,
            action: r.action,
            click: r.click,
            propensity: r.propensity,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a bandit log, rebuilding per-record histories from the organic
/// sessions of the same users.
pub fn read_bandit_log(path: &Path, sessions: &[OrganicSession], p: usize) -> Result<Vec<BanditRecord>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let histories: BTreeMap<u64, Vec<(u32, u32)>> = sessions
        .iter()
        .map(|s| {
            let mut dense = vec![0u32; p];
            for &v in &s.items {
                dense[v as usize] += 1;
            }
            let sparse = dense
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c > 0)
                .map(|(i, &c)| (i as u32, c))
                .collect();
            (s.user_id, sparse)
        })
        .collect();

    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: BanditRecordLine = serde_json::from_str(&line)?;
        let history = histories.get(&raw.user_id).cloned().unwrap_or_default();
        records.push(BanditRecord {
            user_id: raw.user_id,
            n: raw.n,
            history,
            action: raw.action,
            click: raw.click,
            propensity: raw.propensity,
        });
    }
    Ok(records)
}
