//! Report emission: one CSV row per method in the comparison-table layout
//! plus a JSON file with full precision.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::MetricsReport;
use crate::error::{Error, Result};

/// CSV layout: `Method,PatchNum,Reliability,MLG,CLG_<lang>...,CLG_avg,
/// Locality_train,Locality_test`, values to four decimals, MLG left empty
/// when absent. A `# config_hash=...` comment line precedes the header
/// when a hash is supplied.
pub fn render_csv(reports: &[MetricsReport], config_hash: Option<&str>) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Data("no reports to emit".to_string()));
    }
    let langs: Vec<&str> = reports[0].clg.iter().map(|s| s.lang.as_str()).collect();
    for r in reports {
        let rl: Vec<&str> = r.clg.iter().map(|s| s.lang.as_str()).collect();
        if rl != langs {
            return Err(Error::Data(format!(
                "report '{}' has language roster {rl:?}, expected {langs:?}",
                r.method
            )));
        }
    }

    let mut out = String::new();
    if let Some(h) = config_hash {
        out.push_str(&format!("# config_hash={h}\n"));
    }
    out.push_str("Method,PatchNum,Reliability,MLG");
    for lang in &langs {
        out.push_str(&format!(",CLG_{lang}"));
    }
    out.push_str(",CLG_avg,Locality_train,Locality_test\n");

    for r in reports {
        out.push_str(&format!("{},{},{:.4},", r.method, r.patch_count, r.reliability));
        if let Some(m) = r.mlg {
            out.push_str(&format!("{m:.4}"));
        }
        for s in &r.clg {
            out.push_str(&format!(",{:.4}", s.value));
        }
        out.push_str(&format!(
            ",{:.4},{:.4},{:.4}\n",
            r.clg_avg, r.locality_train, r.locality_test
        ));
    }
    Ok(out)
}

pub fn render_json(reports: &[MetricsReport]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(reports)?;
    s.push('\n');
    Ok(s)
}

/// Parses a CSV produced by [`render_csv`] back into header-keyed rows;
/// comment lines are skipped. Used by tests and downstream tooling.
pub fn parse_csv(text: &str) -> Result<Vec<BTreeMap<String, String>>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Data("empty CSV".to_string()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Data(format!(
                "CSV row has {} fields, header has {}",
                fields.len(),
                header.len()
            )));
        }
        rows.push(
            header
                .iter()
                .cloned()
                .zip(fields.iter().map(|f| f.to_string()))
                .collect(),
        );
    }
    Ok(rows)
}

pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Writes `<stem>.csv` and `<stem>.json` under `dir`.
pub fn write_reports(
    reports: &[MetricsReport],
    dir: &Path,
    stem: &str,
    config_hash: Option<&str>,
) -> Result<ReportFiles> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&csv_path, render_csv(reports, config_hash)?)?;
    fs::write(&json_path, render_json(reports)?)?;
    Ok(ReportFiles {
        csv: csv_path,
        json: json_path,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{LangScore, LocalitySample};
    use super::*;

    fn sample_report(method: &str) -> MetricsReport {
        MetricsReport {
            method: method.to_string(),
            patch_count: 7,
            reliability: 0.75,
            mlg: Some(2.0 / 3.0),
            clg: vec![
                LangScore {
                    lang: "de".into(),
                    value: 0.5,
                },
                LangScore {
                    lang: "zh".into(),
                    value: 0.25,
                },
            ],
            clg_avg: 0.375,
            locality_train: 0.9,
            locality_test: 0.8,
            locality_train_sample: LocalitySample {
                fraction: 0.1,
                seed: 1,
                size: 10,
            },
            seeds: BTreeMap::new(),
            config_hash: None,
        }
    }

    #[test]
    fn one_report_yields_header_plus_one_row() {
        let csv = render_csv(&[sample_report("Original")], None).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "Method,PatchNum,Reliability,MLG,CLG_de,CLG_zh,CLG_avg,Locality_train,Locality_test"
        );
        assert_eq!(lines[1], "Original,7,0.7500,0.6667,0.5000,0.2500,0.3750,0.9000,0.8000");
    }

    #[test]
    fn csv_reload_matches_json_to_four_decimals() {
        let reports = vec![sample_report("Original"), sample_report("T-patcher")];
        let csv = render_csv(&reports, Some("cafe")).unwrap();
        let rows = parse_csv(&csv).unwrap();
        assert_eq!(rows.len(), 2);
        let parsed: Vec<MetricsReport> =
            serde_json::from_str(&render_json(&reports).unwrap()).unwrap();
        for (row, rep) in rows.iter().zip(parsed.iter()) {
            assert_eq!(row["Method"], rep.method);
            assert_eq!(row["PatchNum"], rep.patch_count.to_string());
            let close = |a: &str, b: f64| (a.parse::<f64>().unwrap() - b).abs() < 0.5e-4;
            assert!(close(&row["Reliability"], rep.reliability));
            assert!(close(&row["MLG"], rep.mlg.unwrap()));
            assert!(close(&row["CLG_avg"], rep.clg_avg));
            assert!(close(&row["Locality_train"], rep.locality_train));
            assert!(close(&row["Locality_test"], rep.locality_test));
            for s in &rep.clg {
                assert!(close(&row[&format!("CLG_{}", s.lang)], s.value));
            }
        }
    }

    #[test]
    fn absent_mlg_leaves_field_empty() {
        let mut r = sample_report("Original");
        r.mlg = None;
        let csv = render_csv(&[r], None).unwrap();
        let rows = parse_csv(&csv).unwrap();
        assert_eq!(rows[0]["MLG"], "");
    }
}
