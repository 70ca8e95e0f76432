//! Experiment report: one row per grid cell, serialized to CSV and JSON.
//!
//! CSV rows re-parse to exactly the in-memory values: finite floats use
//! Rust's shortest round-trip formatting, infinities the `inf` sentinel,
//! absent metrics `n/a`. ATT seconds are quantized to 4 decimals at
//! report-assembly time so the stored value and its rendering agree.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

pub const CSV_COLUMNS: &str = "cell_id,width,data_condition,balancing,folds,acc_mean,acc_std,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std,att_mean_s,att_std_s,ssim_mean,psnr_mean,mse_mean,fid_mean,status,note";

/// Published reference magnitudes carried in the report header as
/// context; never asserted by any test.
pub const REFERENCE_CONTEXT: &str = "reference magnitudes: ssim=0.872 psnr=33.221 (context only, not asserted)";

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub cell_id: String,
    pub width: usize,
    pub data_condition: String,
    pub balancing: String,
    pub folds: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub att_mean_s: Option<f64>,
    pub att_std_s: Option<f64>,
    pub ssim_mean: Option<f64>,
    pub psnr_mean: Option<f64>,
    pub mse_mean: Option<f64>,
    pub fid_mean: Option<f64>,
    pub status: String,
    pub note: String,
}

impl CellResult {
    pub fn failed(cell_id: String, width: usize, condition: &str, balancing: &str, note: String) -> Self {
        Self {
            cell_id,
            width,
            data_condition: condition.to_string(),
            balancing: balancing.to_string(),
            folds: 0,
            acc_mean: 0.0,
            acc_std: 0.0,
            precision_mean: 0.0,
            precision_std: 0.0,
            recall_mean: 0.0,
            recall_std: 0.0,
            f1_mean: 0.0,
            f1_std: 0.0,
            att_mean_s: None,
            att_std_s: None,
            ssim_mean: None,
            psnr_mean: None,
            mse_mean: None,
            fid_mean: None,
            status: "failed".into(),
            note,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub master_seed: u64,
    pub profile: String,
    pub tool_version: String,
    /// Identity of the embedding model behind the FID column.
    pub embed_model: String,
    pub cells: Vec<CellResult>,
}

/// Quantize to the CSV's 4-decimal ATT rendering so the stored value
/// equals its serialized form.
pub fn quantize_att(seconds: f64) -> f64 {
    format!("{seconds:.4}").parse().unwrap_or(seconds)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        None => "n/a".to_string(),
        Some(x) => fmt_f64(x),
    }
}

fn fmt_att(v: Option<f64>) -> String {
    match v {
        None => "n/a".to_string(),
        Some(x) if x.is_infinite() => "inf".to_string(),
        Some(x) => format!("{x:.4}"),
    }
}

fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    Ok(match s {
        "n/a" => None,
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        other => Some(other.parse::<f64>().with_context(|| format!("bad float '{other}'"))?),
    })
}

fn parse_f64(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => other
            .parse::<f64>()
            .with_context(|| format!("bad float '{other}'")),
    }
}

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str("# topogan report v1\n");
        s.push_str(&format!(
            "# master_seed={} profile={} version={} embed_model={}\n",
            self.master_seed, self.profile, self.tool_version, self.embed_model
        ));
        s.push_str(&format!("# {REFERENCE_CONTEXT}\n"));
        s.push_str(CSV_COLUMNS);
        s.push('\n');
        for c in &self.cells {
            let note = c.note.replace(',', ";").replace('\n', " ");
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                c.cell_id,
                c.width,
                c.data_condition,
                c.balancing,
                c.folds,
                fmt_f64(c.acc_mean),
                fmt_f64(c.acc_std),
                fmt_f64(c.precision_mean),
                fmt_f64(c.precision_std),
                fmt_f64(c.recall_mean),
                fmt_f64(c.recall_std),
                fmt_f64(c.f1_mean),
                fmt_f64(c.f1_std),
                fmt_att(c.att_mean_s),
                fmt_att(c.att_std_s),
                fmt_opt(c.ssim_mean),
                fmt_opt(c.psnr_mean),
                fmt_opt(c.mse_mean),
                fmt_opt(c.fid_mean),
                c.status,
                note
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut master_seed = 0u64;
        let mut profile = String::new();
        let mut tool_version = String::new();
        let mut embed_model = String::new();
        let mut cells = Vec::new();
        let mut saw_columns = false;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    if let Some(v) = kv.strip_prefix("master_seed=") {
                        master_seed = v.parse().context("bad master_seed")?;
                    } else if let Some(v) = kv.strip_prefix("profile=") {
                        profile = v.to_string();
                    } else if let Some(v) = kv.strip_prefix("version=") {
                        tool_version = v.to_string();
                    } else if let Some(v) = kv.strip_prefix("embed_model=") {
                        embed_model = v.to_string();
                    }
                }
                continue;
            }
            if !saw_columns {
                if line != CSV_COLUMNS {
                    bail!("unexpected column header: {line}");
                }
                saw_columns = true;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.splitn(21, ',').collect();
            if f.len() != 21 {
                bail!("report row has {} fields: {line}", f.len());
            }
            cells.push(CellResult {
                cell_id: f[0].to_string(),
                width: f[1].parse().context("bad width")?,
                data_condition: f[2].to_string(),
                balancing: f[3].to_string(),
                folds: f[4].parse().context("bad folds")?,
                acc_mean: parse_f64(f[5])?,
                acc_std: parse_f64(f[6])?,
                precision_mean: parse_f64(f[7])?,
                precision_std: parse_f64(f[8])?,
                recall_mean: parse_f64(f[9])?,
                recall_std: parse_f64(f[10])?,
                f1_mean: parse_f64(f[11])?,
                f1_std: parse_f64(f[12])?,
                att_mean_s: parse_opt(f[13])?,
                att_std_s: parse_opt(f[14])?,
                ssim_mean: parse_opt(f[15])?,
                psnr_mean: parse_opt(f[16])?,
                mse_mean: parse_opt(f[17])?,
                fid_mean: parse_opt(f[18])?,
                status: f[19].to_string(),
                note: f[20].to_string(),
            });
        }
        Ok(Self {
            master_seed,
            profile,
            tool_version,
            embed_model,
            cells,
        })
    }

    /// JSON document; infinities and absent metrics use string sentinels
    /// (`"inf"`, `"n/a"`), everything else plain numbers.
    pub fn to_json(&self) -> Value {
        let cells: Vec<Value> = self
            .cells
            .iter()
            .map(|c| {
                json!({
                    "cell_id": c.cell_id,
                    "width": c.width,
                    "data_condition": c.data_condition,
                    "balancing": c.balancing,
                    "folds": c.folds,
                    "accuracy": { "mean": num(c.acc_mean), "std": num(c.acc_std) },
                    "precision": { "mean": num(c.precision_mean), "std": num(c.precision_std) },
                    "recall": { "mean": num(c.recall_mean), "std": num(c.recall_std) },
                    "f1": { "mean": num(c.f1_mean), "std": num(c.f1_std) },
                    "att_s": { "mean": opt(c.att_mean_s), "std": opt(c.att_std_s) },
                    "gan_quality": {
                        "ssim": opt(c.ssim_mean),
                        "psnr": opt(c.psnr_mean),
                        "mse": opt(c.mse_mean),
                        "fid": opt(c.fid_mean),
                    },
                    "status": c.status,
                    "note": c.note,
                })
            })
            .collect();
        json!({
            "report": "topogan-v1",
            "master_seed": self.master_seed,
            "profile": self.profile,
            "version": self.tool_version,
            "embed_model": self.embed_model,
            "reference_context": REFERENCE_CONTEXT,
            "cells": cells,
        })
    }

    pub fn write(&self, dir: &Path, formats: &[String]) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if formats.iter().any(|f| f == "csv") {
            std::fs::write(dir.join("report.csv"), self.to_csv())?;
        }
        if formats.iter().any(|f| f == "json") {
            let mut text = serde_json::to_string_pretty(&self.to_json())?;
            text.push('\n');
            std::fs::write(dir.join("report.json"), text)?;
        }
        Ok(())
    }
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn opt(x: Option<f64>) -> Value {
    match x {
        None => json!("n/a"),
        Some(v) => num(v),
    }
}

/// Minimal structural validation of the JSON schema.
pub fn validate_json(v: &Value) -> Result<()> {
    let obj = v.as_object().context("report must be an object")?;
    for key in [
        "report",
        "master_seed",
        "profile",
        "version",
        "embed_model",
        "reference_context",
        "cells",
    ] {
        if !obj.contains_key(key) {
            bail!("report JSON lacks key '{key}'");
        }
    }
    let cells = obj["cells"].as_array().context("cells must be an array")?;
    for c in cells {
        let co = c.as_object().context("cell must be an object")?;
        for key in [
            "cell_id",
            "width",
            "data_condition",
            "balancing",
            "folds",
            "accuracy",
            "precision",
            "recall",
            "f1",
            "att_s",
            "gan_quality",
            "status",
            "note",
        ] {
            if !co.contains_key(key) {
                bail!("cell lacks key '{key}'");
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentReport {
        ExperimentReport {
            master_seed: 7,
            profile: "desk".into(),
            tool_version: "0.1.0".into(),
            embed_model: "cnn-w16".into(),
            cells: vec![
                CellResult {
                    cell_id: "w16/original/none".into(),
                    width: 16,
                    data_condition: "original".into(),
                    balancing: "none".into(),
                    folds: 8,
                    acc_mean: 0.9377,
                    acc_std: 0.021,
                    precision_mean: 0.93,
                    precision_std: 0.02,
                    recall_mean: 0.94,
                    recall_std: 0.018,
                    f1_mean: 1.0 / 3.0,
                    f1_std: 0.0,
                    att_mean_s: Some(quantize_att(0.010849)),
                    att_std_s: Some(quantize_att(0.0003)),
                    ssim_mean: Some(0.83),
                    psnr_mean: Some(f64::INFINITY),
                    mse_mean: Some(12.5),
                    fid_mean: Some(3.75),
                    status: "ok".into(),
                    note: String::new(),
                },
                CellResult::failed(
                    "w8/synthesized/uns".into(),
                    8,
                    "synthesized",
                    "uns",
                    "class 3 empty after undersampling, oops".into(),
                ),
            ],
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let report = sample();
        let text = report.to_csv();
        let back = ExperimentReport::from_csv(&text).unwrap();
        assert_eq!(report, back);
        // Serializing again is byte-identical.
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn att_formats_to_four_decimals() {
        let report = sample();
        let text = report.to_csv();
        assert!(text.contains(",0.0108,"), "{text}");
    }

    #[test]
    fn json_is_valid_against_schema() {
        let v = sample().to_json();
        validate_json(&v).unwrap();
        assert_eq!(v["cells"][0]["gan_quality"]["psnr"], "inf");
        assert_eq!(v["cells"][1]["gan_quality"]["fid"], "n/a");
    }
}
