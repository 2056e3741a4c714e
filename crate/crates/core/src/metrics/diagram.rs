//! Reliability-diagram rows and their CSV form.

use std::io::{self, Write};

use super::{MetricsError, ReliabilityTable};

pub const CSV_HEADER: &str = "threshold_mm_h,lead_time,bin_lo,bin_hi,count,mean_conf,obs_freq,abs_gap";

#[derive(Debug, Clone, PartialEq)]
pub struct DiagramRow {
    pub threshold_mm_h: f64,
    pub lead_time: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
    pub mean_conf: Option<f64>,
    pub obs_freq: Option<f64>,
    pub abs_gap: Option<f64>,
}

/// Optional filters on the exported rows.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiagramSelection {
    pub threshold_mm_h: Option<f64>,
    pub lead_time: Option<usize>,
}

/// One row per (threshold, lead time, bin) cell, ordered by threshold, then
/// lead time, then bin. Empty cells are kept with blank statistics.
pub fn diagram_export(
    table: &ReliabilityTable,
    selection: DiagramSelection,
) -> Result<Vec<DiagramRow>, MetricsError> {
    let threshold = match selection.threshold_mm_h {
        Some(rate) => Some(
            table
                .thresholds_mm_h()
                .iter()
                .position(|e| (e - rate).abs() <= 1e-9 * e.abs().max(1.0))
                .ok_or(MetricsError::UnknownThreshold(rate))?,
        ),
        None => None,
    };
    let bins = table.bins() as f64;
    let mut rows = Vec::new();
    for (t, &rate) in table.thresholds_mm_h().iter().enumerate() {
        if threshold.is_some_and(|sel| sel != t) {
            continue;
        }
        for lead in 0..table.lead_times() {
            if selection.lead_time.is_some_and(|sel| sel != lead) {
                continue;
            }
            for b in 0..table.bins() {
                let cell = table.cell(t, lead, b);
                rows.push(DiagramRow {
                    threshold_mm_h: rate,
                    lead_time: lead,
                    bin_lo: b as f64 / bins,
                    bin_hi: (b + 1) as f64 / bins,
                    count: cell.count,
                    mean_conf: cell.mean_conf,
                    obs_freq: cell.obs_freq,
                    abs_gap: cell.abs_gap(),
                });
            }
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    // f64 Display is the shortest representation that parses back to the same bits.
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_diagram_csv<W: Write>(rows: &[DiagramRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.threshold_mm_h,
            r.lead_time,
            r.bin_lo,
            r.bin_hi,
            r.count,
            opt(r.mean_conf),
            opt(r.obs_freq),
            opt(r.abs_gap)
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{etce, threshold_term};

    fn table() -> ReliabilityTable {
        let mut t = ReliabilityTable::empty(vec![1.0, 1.5], 2, 4);
        t.record(0, 0, 1, 0.3, true);
        t.record(0, 0, 1, 0.4, false);
        t.record(1, 1, 3, 0.9, true);
        t
    }

    #[test]
    fn row_count_and_order() {
        let rows = diagram_export(&table(), DiagramSelection::default()).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 4);
        assert_eq!(rows[5].threshold_mm_h, 1.0);
        assert_eq!(rows[5].lead_time, 1);
        assert_eq!(rows[5].bin_lo, 0.25);
        assert_eq!(rows[0].count, 0);
        assert_eq!(rows[0].mean_conf, None);
    }

    #[test]
    fn empty_cells_are_blank_in_csv() {
        let rows = diagram_export(&table(), DiagramSelection::default()).unwrap();
        let mut buf = Vec::new();
        write_diagram_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "1,0,0,0.25,0,,,");
        assert_eq!(lines.len(), 17);
    }

    #[test]
    fn selection_filters() {
        let sel = DiagramSelection {
            threshold_mm_h: Some(1.5),
            lead_time: Some(1),
        };
        let rows = diagram_export(&table(), sel).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.threshold_mm_h == 1.5 && r.lead_time == 1));
        let bad = DiagramSelection {
            threshold_mm_h: Some(3.0),
            lead_time: None,
        };
        assert!(matches!(
            diagram_export(&table(), bad),
            Err(MetricsError::UnknownThreshold(_))
        ));
    }

    #[test]
    fn gaps_match_etce_terms() {
        let t = table();
        let rows = diagram_export(&t, DiagramSelection::default()).unwrap();
        let gaps: Vec<f64> = rows
            .iter()
            .filter(|r| r.threshold_mm_h == 1.0 && r.lead_time == 0)
            .filter_map(|r| r.abs_gap)
            .collect();
        let from_rows = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert_eq!(Some(from_rows), threshold_term(&t, 0, 0));
        let e = etce(&t).unwrap();
        assert_eq!(e.per_lead_time[0], Some(from_rows));
    }
}
