//! Weight-distance traces extracted from training logs: how far apart the
//! pairs' teachers sit in parameter space, and how far each teacher has
//! drifted from its own student, over the course of a run.

use std::path::Path;

use crate::ctf::MetricsRecord;
use crate::error::{Error, Result};
use crate::eval::export::{line_chart, write_csv, Series};

/// Per-pair distance series aligned on a common iteration axis.
/// `inter[p][k]` is pair `pair_ids[p]`'s mean teacher-to-other-teachers
/// distance at `iters[k]`; `intra[p][k]` is its teacher-to-student distance.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTrace {
    pub pair_ids: Vec<usize>,
    pub iters: Vec<u64>,
    pub inter: Vec<Vec<f64>>,
    pub intra: Vec<Vec<f64>>,
}

impl DistanceTrace {
    /// Position of an iteration on the axis, if it was logged.
    pub fn index_of(&self, iter: u64) -> Option<usize> {
        self.iters.binary_search(&iter).ok()
    }
}

/// Builds the distance trace from raw metrics records. The records may
/// arrive in any order but must be rectangular: every logged iteration
/// carries exactly one record for every pair.
pub fn weight_distance_trace(records: &[MetricsRecord]) -> Result<DistanceTrace> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("weight_distance_trace: no records".to_string()));
    }
    let mut pair_ids: Vec<usize> = records.iter().map(|r| r.pair_id).collect();
    pair_ids.sort_unstable();
    pair_ids.dedup();
    let mut iters: Vec<u64> = records.iter().map(|r| r.iter).collect();
    iters.sort_unstable();
    iters.dedup();
    if iters.len() * pair_ids.len() != records.len() {
        return Err(Error::InvalidConfig(format!(
            "records are not rectangular: {} iterations x {} pairs != {} records",
            iters.len(),
            pair_ids.len(),
            records.len()
        )));
    }

    let mut inter = vec![vec![f64::NAN; iters.len()]; pair_ids.len()];
    let mut intra = vec![vec![f64::NAN; iters.len()]; pair_ids.len()];
    for r in records {
        if !r.inter_pair_distance.is_finite() || !r.intra_pair_distance.is_finite() {
            return Err(Error::Domain {
                op: "weight_distance_trace",
                detail: format!("non-finite distance at iteration {}", r.iter),
            });
        }
        let p = pair_ids.binary_search(&r.pair_id).expect("id from this very list");
        let k = iters.binary_search(&r.iter).expect("iter from this very list");
        if !inter[p][k].is_nan() {
            return Err(Error::InvalidConfig(format!(
                "duplicate record for pair {} at iteration {}",
                r.pair_id, r.iter
            )));
        }
        inter[p][k] = r.inter_pair_distance;
        intra[p][k] = r.intra_pair_distance;
    }
    Ok(DistanceTrace { pair_ids, iters, inter, intra })
}

/// Iterations on which a training stage ends: each record whose phase
/// differs from the next iteration's phase, plus the final iteration.
/// Records must cover a contiguous, rectangular run.
pub fn stage_boundaries(records: &[MetricsRecord]) -> Result<Vec<u64>> {
    let trace = weight_distance_trace(records)?;
    let mut phase_of = std::collections::BTreeMap::new();
    for r in records {
        phase_of.insert(r.iter, r.phase.clone());
    }
    let mut out = Vec::new();
    for w in trace.iters.windows(2) {
        if phase_of[&w[0]] != phase_of[&w[1]] {
            out.push(w[0]);
        }
    }
    if let Some(&last) = trace.iters.last() {
        out.push(last);
    }
    Ok(out)
}

/// Writes the trace as CSV: one row per iteration, inter/intra columns per
/// pair.
pub fn write_distance_csv(path: &Path, trace: &DistanceTrace) -> Result<()> {
    let mut header = vec!["iter".to_string()];
    for &p in &trace.pair_ids {
        header.push(format!("inter_pair{p}"));
        header.push(format!("intra_pair{p}"));
    }
    let mut rows = Vec::with_capacity(trace.iters.len());
    for (k, &iter) in trace.iters.iter().enumerate() {
        let mut row = vec![iter.to_string()];
        for p in 0..trace.pair_ids.len() {
            row.push(format!("{}", trace.inter[p][k]));
            row.push(format!("{}", trace.intra[p][k]));
        }
        rows.push(row);
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &header_refs, &rows)
}

/// Renders the trace as a line chart, one inter and one intra series per
/// pair.
pub fn distance_chart(path: &Path, title: &str, trace: &DistanceTrace) -> Result<()> {
    let mut series = Vec::new();
    for (p, &pid) in trace.pair_ids.iter().enumerate() {
        let pts = |values: &[f64]| {
            trace
                .iters
                .iter()
                .zip(values)
                .map(|(&i, &v)| (i as f64, v))
                .collect::<Vec<_>>()
        };
        series.push(Series { name: format!("pair {pid} inter"), points: pts(&trace.inter[p]) });
        series.push(Series { name: format!("pair {pid} intra"), points: pts(&trace.intra[p]) });
    }
    line_chart(path, title, "iteration", "L2 distance", &series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iter: u64, phase: &str, pair_id: usize, inter: f64, intra: f64) -> MetricsRecord {
        MetricsRecord {
            iter,
            phase: phase.to_string(),
            pair_id,
            l_l: 1.0,
            l_u: 0.5,
            l_dpc: 0.0,
            l_acc: 0.0,
            winner_k: None,
            inter_pair_distance: inter,
            intra_pair_distance: intra,
        }
    }

    fn alternating_records() -> Vec<MetricsRecord> {
        // S = 2, max_iter = 8, two pairs
        let mut v = Vec::new();
        for t in 1..=8u64 {
            let phase = if ((t - 1) / 2) % 2 == 0 { "stage1" } else { "stage2" };
            for p in 0..2 {
                v.push(rec(t, phase, p, 1.0 + t as f64, 0.1 * t as f64));
            }
        }
        v
    }

    #[test]
    fn trace_aligns_pairs_on_a_common_axis() {
        let mut records = alternating_records();
        // order independence
        records.reverse();
        let trace = weight_distance_trace(&records).unwrap();
        assert_eq!(trace.pair_ids, vec![0, 1]);
        assert_eq!(trace.iters, (1..=8).collect::<Vec<_>>());
        assert_eq!(trace.inter[0][0], 2.0);
        assert_eq!(trace.inter[1][7], 9.0);
        assert_eq!(trace.intra[0][3], 0.4);
        assert_eq!(trace.index_of(5), Some(4));
        assert_eq!(trace.index_of(9), None);
    }

    #[test]
    fn boundaries_fall_where_the_phase_flips() {
        let records = alternating_records();
        let b = stage_boundaries(&records).unwrap();
        assert_eq!(b, vec![2, 4, 6, 8]);
    }

    #[test]
    fn ragged_or_duplicated_records_are_rejected() {
        let mut records = alternating_records();
        records.pop();
        assert!(weight_distance_trace(&records).is_err());

        let mut records = alternating_records();
        let dup = records[0].clone();
        records.push(dup);
        assert!(weight_distance_trace(&records).is_err());

        assert!(weight_distance_trace(&[]).is_err());
    }

    #[test]
    fn csv_and_chart_outputs_written() {
        let dir = tempfile::tempdir().unwrap();
        let records = alternating_records();
        let trace = weight_distance_trace(&records).unwrap();

        let csv = dir.path().join("dist.csv");
        write_distance_csv(&csv, &trace).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,inter_pair0,intra_pair0,inter_pair1,intra_pair1"
        );
        assert_eq!(text.lines().count(), 9);

        let svg = dir.path().join("dist.svg");
        distance_chart(&svg, "weight distances", &trace).unwrap();
        let body = std::fs::read_to_string(&svg).unwrap();
        assert_eq!(body.matches("<polyline").count(), 4);
    }
}
