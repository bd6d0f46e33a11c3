//! Consolidated tables over run directories.
//!
//! The MS tables have one row per (SAE type, layer) and one column per
//! expansion factor; each cell holds `best / worst` (or the mean) of that
//! run's `ms_report.txt`. Runs without an SAE have no expansion factor and
//! fill every column of their row. Hierarchy reports are appended verbatim.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use saescope::monosemanticity::MsReport;
use saescope::SaeConfig;

use crate::config::Resolved;
use crate::{CliError, InModule};

pub const MS_REPORT: &str = "ms_report.txt";
pub const RUN_INFO: &str = "ms_run.txt";
pub const HIERARCHY_REPORT: &str = "hierarchy_report.txt";

/// Row label for an SAE, e.g. `Matryoshka BatchTopK`.
pub fn sae_type(sae: &SaeConfig) -> String {
    let base = match sae.activation.name() {
        "relu" => "ReLU",
        "topk" => "TopK",
        _ => "BatchTopK",
    };
    match sae.matryoshka_groups {
        Some(_) => format!("Matryoshka {base}"),
        None => base.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunInfo {
    pub sae_type: String,
    pub layer: String,
    /// Expansion factor, or `-` for raw neurons.
    pub expansion: String,
    pub normalization: String,
}

impl RunInfo {
    pub fn to_text(&self) -> String {
        format!(
            "sae_type={}\nlayer={}\nexpansion={}\nnormalization={}\n",
            self.sae_type, self.layer, self.expansion, self.normalization
        )
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let map: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
        let get = |k: &str| {
            map.get(k)
                .map(|v| v.to_string())
                .ok_or_else(|| format!("run info lacks {k}"))
        };
        Ok(Self {
            sae_type: get("sae_type")?,
            layer: get("layer")?,
            expansion: get("expansion")?,
            normalization: get("normalization")?,
        })
    }
}

struct Run {
    dir: PathBuf,
    info: RunInfo,
    ms: MsReport,
    hierarchy: Option<String>,
}

fn load(dirs: &[PathBuf], module: &'static str) -> Result<Vec<Run>, CliError> {
    let missing: Vec<String> = dirs
        .iter()
        .flat_map(|d| [d.join(MS_REPORT), d.join(RUN_INFO)])
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Pipeline {
            module,
            message: format!("missing artifacts: {}", missing.join(", ")),
        });
    }
    dirs.iter()
        .map(|dir| {
            let read = |name: &str| fs::read_to_string(dir.join(name)).in_module(module);
            let ms = MsReport::from_text(&read(MS_REPORT)?).in_module("monosemanticity")?;
            let info = RunInfo::from_text(&read(RUN_INFO)?).map_err(|message| CliError::Pipeline { module, message })?;
            let hierarchy = dir
                .join(HIERARCHY_REPORT)
                .is_file()
                .then(|| read(HIERARCHY_REPORT))
                .transpose()?;
            Ok(Run {
                dir: dir.clone(),
                info,
                ms,
                hierarchy,
            })
        })
        .collect()
}

fn table(runs: &[Run], title: &str, cell: impl Fn(&MsReport) -> String) -> Result<String, String> {
    let mut columns: Vec<String> = runs
        .iter()
        .map(|r| r.info.expansion.clone())
        .filter(|e| e != "-")
        .collect();
    columns.sort_by_key(|e| (e.parse::<u64>().unwrap_or(u64::MAX), e.clone()));
    columns.dedup();
    if columns.is_empty() {
        columns.push("-".into());
    }
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut cells: BTreeMap<(String, String, String), String> = BTreeMap::new();
    for run in runs {
        let key = (run.info.sae_type.clone(), run.info.layer.clone());
        if !rows.contains(&key) {
            rows.push(key.clone());
        }
        let targets: Vec<String> = if run.info.expansion == "-" {
            columns.clone()
        } else {
            vec![run.info.expansion.clone()]
        };
        for col in targets {
            let slot = (key.0.clone(), key.1.clone(), col.clone());
            if cells.insert(slot, cell(&run.ms)).is_some() {
                return Err(format!(
                    "two runs for {} / {} / expansion {col} (second: {})",
                    key.0,
                    key.1,
                    run.dir.display()
                ));
            }
        }
    }
    let mut out = format!("# {title}\nSAE type\tLayer");
    for c in &columns {
        write!(out, "\tε={c}").unwrap();
    }
    out.push('\n');
    for (sae, layer) in &rows {
        write!(out, "{sae}\t{layer}").unwrap();
        for c in &columns {
            let v = cells.get(&(sae.clone(), layer.clone(), c.clone()));
            write!(out, "\t{}", v.map_or("-", String::as_str)).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Full report text for the given run directories, in order.
pub fn render(dirs: &[PathBuf], module: &'static str) -> Result<String, CliError> {
    let runs = load(dirs, module)?;
    let err = |message| CliError::Pipeline { module, message };
    let mut out = table(&runs, "MS best / worst", |m| {
        format!("{:.3} / {:.3}", m.summary.best, m.summary.worst)
    })
    .map_err(err)?;
    out.push('\n');
    out.push_str(&table(&runs, "MS mean", |m| format!("{:.3}", m.summary.mean)).map_err(err)?);
    for run in &runs {
        if let Some(h) = &run.hierarchy {
            write!(out, "\n# Hierarchy levels: {}\n{h}", run.dir.display()).unwrap();
        }
    }
    Ok(out)
}

pub fn run(r: &Resolved, module: &'static str) -> Result<(), CliError> {
    let dirs: Vec<PathBuf> = r
        .require("runs")?
        .split(',')
        .map(|d| Path::new(d.trim()).to_path_buf())
        .collect();
    let text = render(&dirs, module)?;
    fs::write(r.out_dir()?.join("report.txt"), &text).in_module(module)?;
    print!("{text}");
    Ok(())
}
