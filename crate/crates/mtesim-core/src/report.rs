//! Stable renderings of experiment results: comment-headed CSV for plotting
//! and JSON for machine consumption.
//!
//! Every CSV starts with the version line [`CSV_HEADER`] followed by a column
//! header, so downstream tooling can sanity-check what it is parsing. Rates
//! are printed with six decimals to keep files byte-stable across runs with
//! the same seed. JSON output is pretty-printed serde output with a trailing
//! newline.

use crate::attacksim::AttackStats;
use crate::gadgets::{AblationRow, SweepPoint};
use serde::Serialize;
use serde_json::json;
use std::io::{self, Write};

/// Version line opening every CSV emitted by this crate.
pub const CSV_HEADER: &str = "# mtesim csv v1";

/// Sweep points as `axis,series,rate,trials,seed` rows.
pub fn write_sweep_csv(w: &mut impl Write, points: &[SweepPoint]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    writeln!(w, "axis,series,rate,trials,seed")?;
    for p in points {
        writeln!(
            w,
            "{},{},{:.6},{},{}",
            p.axis, p.series, p.rate, p.trials, p.seed
        )?;
    }
    Ok(())
}

/// Ablation rows with their cache-behaviour classifications.
pub fn write_ablation_csv(w: &mut impl Write, rows: &[AblationRow]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    writeln!(
        w,
        "config,match_rate,mismatch_rate,match_class,mismatch_class,trials,seed"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{},{},{},{}",
            r.config.label(),
            r.match_rate,
            r.mismatch_rate,
            format!("{:?}", r.match_class).to_lowercase(),
            format!("{:?}", r.mismatch_class).to_lowercase(),
            r.trials,
            r.seed
        )?;
    }
    Ok(())
}

/// Attack campaign aggregates flattened onto the sweep row shape: the axis
/// column carries the policy label and each campaign contributes a
/// `*_mean_retries` and a `*_success_rate` row.
pub fn write_attack_csv(w: &mut impl Write, stats: &[AttackStats]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    writeln!(w, "axis,series,rate,trials,seed")?;
    for s in stats {
        writeln!(
            w,
            "{},{}_mean_retries,{:.6},{},{}",
            s.policy, s.attack, s.mean_retries, s.rounds, s.seed
        )?;
        writeln!(
            w,
            "{},{}_success_rate,{:.6},{},{}",
            s.policy, s.attack, s.success_rate, s.rounds, s.seed
        )?;
    }
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(w: &mut impl Write, value: &T) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w)
}

/// Compact sidecar summary for a sweep CSV: row count, distinct series, axis
/// range, and the seed, enough to validate a plot's inputs at a glance.
pub fn sweep_summary(points: &[SweepPoint]) -> serde_json::Value {
    let mut series: Vec<&str> = points.iter().map(|p| p.series.as_str()).collect();
    series.sort_unstable();
    series.dedup();
    json!({
        "rows": points.len(),
        "series": series,
        "axis_min": points.iter().map(|p| p.axis).min(),
        "axis_max": points.iter().map(|p| p.axis).max(),
        "seed": points.first().map(|p| p.seed),
    })
}

/// Sidecar summary for an ablation CSV.
pub fn ablation_summary(rows: &[AblationRow]) -> serde_json::Value {
    json!({
        "rows": rows.len(),
        "configs": rows.iter().map(|r| r.config.label()).collect::<Vec<_>>(),
        "seed": rows.first().map(|r| r.seed),
    })
}

/// Sidecar summary for an attack CSV.
pub fn attack_summary(stats: &[AttackStats]) -> serde_json::Value {
    json!({
        "rows": stats.len() * 2,
        "campaigns": stats
            .iter()
            .map(|s| format!("{}/{}", s.policy, s.attack))
            .collect::<Vec<_>>(),
        "seed": stats.first().map(|s| s.seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gadgets::{AblationConfig, CacheClass};

    fn point(axis: u64, series: &str, rate: f64) -> SweepPoint {
        SweepPoint {
            axis,
            series: series.to_string(),
            rate,
            trials: 30,
            seed: 7,
        }
    }

    #[test]
    fn sweep_csv_is_byte_stable() {
        let points = [point(0, "len2_ld_mismatch", 1.0), point(10, "len2_ld_mismatch", 5.0 / 6.0)];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &points).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# mtesim csv v1\naxis,series,rate,trials,seed\n0,len2_ld_mismatch,1.000000,30,7\n10,len2_ld_mismatch,0.833333,30,7\n"
        );
    }

    #[test]
    fn ablation_csv_lists_one_row_per_config() {
        let row = AblationRow {
            config: AblationConfig::NoSeNoDp,
            match_rate: 0.0,
            mismatch_rate: 0.0,
            match_class: CacheClass::Uncached,
            mismatch_class: CacheClass::Uncached,
            trials: 60,
            seed: 3,
        };
        let mut buf = Vec::new();
        write_ablation_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# mtesim csv v1\nconfig,"));
        assert!(text.contains("NO_SE_NO_DP,0.000000,0.000000,uncached,uncached,60,3"));
    }

    #[test]
    fn attack_csv_flattens_to_two_rows_per_campaign() {
        let stats = AttackStats {
            policy: "scudo".into(),
            attack: "uaf".into(),
            seed: 5,
            rounds: 100,
            successes: 100,
            success_rate: 1.0,
            mean_retries: 16.25,
            total_faults: 0,
        };
        let mut buf = Vec::new();
        write_attack_csv(&mut buf, &[stats]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("scudo,uaf_mean_retries,16.250000,100,5"));
        assert!(text.contains("scudo,uaf_success_rate,1.000000,100,5"));
    }

    #[test]
    fn json_outputs_parse_back() {
        let points = vec![point(3, "gap0_mismatch", 0.0)];
        let mut buf = Vec::new();
        write_json(&mut buf, &points).unwrap();
        assert_eq!(buf.last(), Some(&b'\n'));
        let back: Vec<SweepPoint> = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, points);

        let summary = sweep_summary(&points);
        assert_eq!(summary["rows"], 1);
        assert_eq!(summary["axis_min"], 3);
        assert_eq!(summary["series"][0], "gap0_mismatch");
    }
}
