//! Result tables, plot data and the bundled published reference values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charlm::Layer;
use crate::decoder::{AnalysisCase, TrialRecord};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no results in {0}")]
    NoResults(String),
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
    #[error("incomplete results: {0}")]
    Incomplete(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Per-trial CSV over (case, layer) blocks.
pub fn trials_csv(blocks: &[(AnalysisCase, Layer, Vec<TrialRecord>)]) -> String {
    let mut out = String::from("analysis,case,layer,trial,lambda,acc_2v2,mse\n");
    for (case, layer, records) in blocks {
        for r in records {
            writeln!(out, "{},{},{},{},{:?},{:?},{:?}", case.analysis, case.case_no, layer, r.trial, r.lambda, r.acc_2v2, r.mse).unwrap();
        }
    }
    out
}

/// One (case, layer) cell of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub case: String,
    pub layer: Layer,
    pub n_trials: usize,
    pub mean_acc: f64,
    pub sd_acc: f64,
    pub mean_mse: f64,
    pub n_perms: usize,
    pub p_acc: Option<f64>,
    pub p_mse: Option<f64>,
    /// Rejected by BY-FDR over the run's family of accuracy tests.
    pub significant_acc: bool,
    pub significant_mse: bool,
}

const SUMMARY_HEADER: &str = "case,layer,n_trials,mean_acc,sd_acc,mean_mse,n_perms,p_acc,p_mse,significant_acc,significant_mse";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:?}"))
}

pub fn summary_csv(rows: &[SummaryRow], family: &str) -> String {
    let mut out = format!("# fdr=BY family={family}\n{SUMMARY_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:?},{:?},{:?},{},{},{},{},{}",
            r.case,
            r.layer,
            r.n_trials,
            r.mean_acc,
            r.sd_acc,
            r.mean_mse,
            r.n_perms,
            opt(r.p_acc),
            opt(r.p_mse),
            r.significant_acc,
            r.significant_mse
        )
        .unwrap();
    }
    out
}

pub fn parse_summary_csv(text: &str, path: &str) -> Result<Vec<SummaryRow>, ReportError> {
    let err = |line: usize, message: String| ReportError::Format {
        path: path.to_string(),
        line,
        message,
    };
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            if line != SUMMARY_HEADER {
                return Err(err(n, format!("expected header {SUMMARY_HEADER:?}")));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(err(n, format!("expected 11 fields, found {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| err(n, format!("bad number {:?}", f[k])));
        let int = |k: usize| f[k].parse::<usize>().map_err(|_| err(n, format!("bad count {:?}", f[k])));
        let optional = |k: usize| if f[k].is_empty() { Ok(None) } else { num(k).map(Some) };
        let flag = |k: usize| f[k].parse::<bool>().map_err(|_| err(n, format!("bad flag {:?}", f[k])));
        AnalysisCase::parse_selection(f[0]).map_err(|m| err(n, m))?;
        rows.push(SummaryRow {
            case: f[0].to_string(),
            layer: f[1].parse().map_err(|m: String| err(n, m))?,
            n_trials: int(2)?,
            mean_acc: num(3)?,
            sd_acc: num(4)?,
            mean_mse: num(5)?,
            n_perms: int(6)?,
            p_acc: optional(7)?,
            p_mse: optional(8)?,
            significant_acc: flag(9)?,
            significant_mse: flag(10)?,
        });
    }
    if !header_seen {
        return Err(err(1, "missing header".into()));
    }
    Ok(rows)
}

/// Reads `summary.csv` from a results directory.
pub fn load_summary(dir: &Path) -> Result<Vec<SummaryRow>, ReportError> {
    let path = dir.join(SUMMARY_FILE);
    if !path.exists() {
        return Err(ReportError::NoResults(dir.display().to_string()));
    }
    let text = fs::read_to_string(&path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let rows = parse_summary_csv(&text, &path.display().to_string())?;
    if rows.is_empty() {
        return Err(ReportError::NoResults(dir.display().to_string()));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Acc2v2,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub id: String,
    pub label: String,
    /// One entry per x value; `None` where the layer was not run.
    pub y: Vec<Option<f64>>,
    pub star: Vec<bool>,
}

/// Line-plot data: x = layer, one series per analysis case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub metric: Metric,
    pub x: Vec<String>,
    pub series: Vec<Series>,
    /// Chance reference line; absent for MSE.
    pub chance: Option<f64>,
}

pub fn plot_data(rows: &[SummaryRow], metric: Metric) -> Result<PlotData, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::NoResults("summary".into()));
    }
    let layers: Vec<Layer> = Layer::ALL.iter().copied().filter(|l| rows.iter().any(|r| r.layer == *l)).collect();
    let series = AnalysisCase::all()
        .iter()
        .filter(|c| rows.iter().any(|r| r.case == c.id()))
        .map(|c| {
            let cell = |l: &Layer| rows.iter().find(|r| r.case == c.id() && r.layer == *l);
            Series {
                id: c.id(),
                label: c.description(),
                y: layers
                    .iter()
                    .map(|l| {
                        cell(l).map(|r| match metric {
                            Metric::Acc2v2 => r.mean_acc,
                            Metric::Mse => r.mean_mse,
                        })
                    })
                    .collect(),
                star: layers
                    .iter()
                    .map(|l| {
                        cell(l).is_some_and(|r| match metric {
                            Metric::Acc2v2 => r.significant_acc,
                            Metric::Mse => r.significant_mse,
                        })
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(PlotData {
        metric,
        x: layers.iter().map(|l| l.to_string()).collect(),
        series,
        chance: match metric {
            Metric::Acc2v2 => Some(0.5),
            Metric::Mse => None,
        },
    })
}

/// Cases × layers markdown table; `*` marks FDR-significant cells.
pub fn summary_table(rows: &[SummaryRow], metric: Metric) -> String {
    let mut out = String::from("| case | train | test |");
    for l in Layer::ALL {
        write!(out, " {l} |").unwrap();
    }
    out.push_str("\n|---|---|---|");
    out.push_str(&"---|".repeat(Layer::ALL.len()));
    out.push('\n');
    for c in AnalysisCase::all() {
        if !rows.iter().any(|r| r.case == c.id()) {
            continue;
        }
        write!(
            out,
            "| {} | {}/{} | {}/{} |",
            c.id(),
            c.train_eeg.short(),
            c.train_rep.short(),
            c.test_eeg.short(),
            c.test_rep.short()
        )
        .unwrap();
        for l in Layer::ALL {
            match rows.iter().find(|r| r.case == c.id() && r.layer == l) {
                Some(r) => {
                    let (v, s) = match metric {
                        Metric::Acc2v2 => (r.mean_acc, r.significant_acc),
                        Metric::Mse => (r.mean_mse, r.significant_mse),
                    };
                    write!(out, " {v:.3}{} |", if s { "*" } else { "" }).unwrap();
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

/// Probe accuracies, tasks × layers.
pub fn probe_csv(rows: &[(String, String, BTreeMap<Layer, f64>)]) -> String {
    let mut out = String::from("task,kind");
    for l in Layer::ALL {
        write!(out, ",{l}").unwrap();
    }
    out.push('\n');
    for (task, kind, acc) in rows {
        write!(out, "{task},{kind}").unwrap();
        for l in Layer::ALL {
            match acc.get(&l) {
                Some(a) => write!(out, ",{a:?}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Published values shipped with the crate, kept as the literal text of
/// each number so rendering is byte-stable.
pub mod reference {
    use super::*;

    pub const PROBING_CSV: &str = include_str!("../fixtures/reference/probing.csv");
    pub const DECODING_CSV: &str = include_str!("../fixtures/reference/decoding.csv");
    pub const PERPLEXITY_CSV: &str = include_str!("../fixtures/reference/perplexity.csv");
    pub const SCALARS_CSV: &str = include_str!("../fixtures/reference/scalars.csv");

    pub const SOURCE_TAG: &str = "source=published";

    #[derive(Debug, Clone, PartialEq)]
    pub struct Table {
        pub tag: String,
        pub header: Vec<String>,
        pub rows: Vec<Vec<String>>,
    }

    /// Parses a fixture: one `# ...` tag line carrying [`SOURCE_TAG`], a
    /// header, then rows. Numeric columns are checked but kept as text.
    pub fn parse_table(text: &str, name: &str, numeric_from: usize) -> Result<Table, ReportError> {
        let err = |line: usize, message: String| ReportError::Format {
            path: name.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let tag = match lines.next() {
            Some((_, l)) if l.starts_with("# ") && l.contains(SOURCE_TAG) => l[2..].to_string(),
            _ => return Err(err(1, format!("first line must be a '# {SOURCE_TAG} ...' tag"))),
        };
        let header: Vec<String> = match lines.next() {
            Some((_, l)) => l.split(',').map(String::from).collect(),
            None => return Err(err(2, "missing header".into())),
        };
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(String::from).collect();
            if row.len() != header.len() {
                return Err(err(i + 1, format!("expected {} fields, found {}", header.len(), row.len())));
            }
            for cell in &row[numeric_from.min(row.len())..] {
                if cell != "true" && cell != "false" && cell.parse::<f64>().is_err() {
                    return Err(err(i + 1, format!("{cell:?} is not a number")));
                }
            }
            rows.push(row);
        }
        Ok(Table { tag, header, rows })
    }

    fn markdown(out: &mut String, header: &[String], rows: &[Vec<String>]) {
        writeln!(out, "| {} |", header.join(" | ")).unwrap();
        writeln!(out, "|{}", "---|".repeat(header.len())).unwrap();
        for r in rows {
            writeln!(out, "| {} |", r.join(" | ")).unwrap();
        }
    }

    pub fn render_probing(t: &Table) -> String {
        let mut out = format!("## Probing task accuracy (%)\n\n<!-- {} -->\n\n", t.tag);
        markdown(&mut out, &t.header, &t.rows);
        out
    }

    /// Cases × layers with `*` on cells reported above chance; cells not
    /// reported are `-`.
    pub fn render_decoding(t: &Table) -> Result<String, ReportError> {
        let mut cells: BTreeMap<(String, Layer), String> = BTreeMap::new();
        for (i, r) in t.rows.iter().enumerate() {
            let layer: Layer = r[1].parse().map_err(|m: String| ReportError::Format {
                path: "decoding.csv".into(),
                line: i + 3,
                message: m,
            })?;
            let star = if r[3] == "true" { "*" } else { "" };
            cells.insert((r[0].clone(), layer), format!("{}{star}", r[2]));
        }
        let mut out = format!("## 2 vs. 2 accuracy by analysis case (* above chance)\n\n<!-- {} -->\n\n", t.tag);
        let mut header = vec!["case".to_string(), "description".to_string()];
        header.extend(Layer::ALL.iter().map(|l| l.to_string()));
        let rows: Vec<Vec<String>> = AnalysisCase::all()
            .iter()
            .map(|c| {
                let mut row = vec![c.id(), c.description()];
                row.extend(Layer::ALL.iter().map(|&l| cells.get(&(c.id(), l)).cloned().unwrap_or_else(|| "-".into())));
                row
            })
            .collect();
        markdown(&mut out, &header, &rows);
        Ok(out)
    }

    pub fn render_plain(title: &str, t: &Table) -> String {
        let mut out = format!("## {title}\n\n<!-- {} -->\n\n", t.tag);
        markdown(&mut out, &t.header, &t.rows);
        out
    }

    /// All bundled reference tables as one markdown document.
    pub fn render_all() -> Result<String, ReportError> {
        let probing = parse_table(PROBING_CSV, "probing.csv", 2)?;
        let decoding = parse_table(DECODING_CSV, "decoding.csv", 2)?;
        let perplexity = parse_table(PERPLEXITY_CSV, "perplexity.csv", 2)?;
        let scalars = parse_table(SCALARS_CSV, "scalars.csv", 1)?;
        Ok([
            "# Published reference values\n\nEvery number below is copied from the published results, not computed here.\n".to_string(),
            render_decoding(&decoding)?,
            render_plain("Language model perplexity", &perplexity),
            render_probing(&probing),
            render_plain("Other reported quantities", &scalars),
        ]
        .join("\n"))
    }
}
