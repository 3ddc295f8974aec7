//! Report rendering (JSON, CSV, markdown) and the `--out` directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use finsler::calculus::GeodesicTrace;
use finsler::classify::ClassificationReport;
use finsler::verify::{Status, VerificationReport};
use serde::Serialize;

use crate::{InspectReport, TensorOut};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Markdown,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Markdown => "md",
        }
    }
}

pub struct Rendered {
    pub format: Format,
    pub text: String,
}

impl Rendered {
    pub fn markdown(text: String) -> Self {
        Rendered {
            format: Format::Markdown,
            text,
        }
    }
}

pub fn json<T: Serialize + ?Sized>(value: &T) -> Rendered {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    Rendered {
        format: Format::Json,
        text,
    }
}

fn csv(text: String) -> Rendered {
    Rendered {
        format: Format::Csv,
        text,
    }
}

pub fn status_name(s: Status) -> &'static str {
    match s {
        Status::Pass => "pass",
        Status::Fail => "fail",
        Status::Skipped => "skipped",
        Status::Degenerate => "degenerate",
    }
}

/// Joins several reports of one format: a JSON array, CSV with a single
/// header, or markdown sections.
pub fn combine(reports: &[&Rendered], multiple: bool) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    if !multiple {
        return first.text.clone();
    }
    match first.format {
        Format::Json => {
            let items: Vec<&str> = reports.iter().map(|r| r.text.trim_end()).collect();
            format!("[\n{}\n]\n", items.join(",\n"))
        }
        Format::Csv => {
            let mut out = first.text.clone();
            for r in &reports[1..] {
                out.extend(r.text.lines().skip(1).map(|l| format!("{l}\n")));
            }
            out
        }
        Format::Markdown => reports.iter().map(|r| r.text.as_str()).collect::<Vec<_>>().join("\n"),
    }
}

pub fn inspect(r: &InspectReport, format: Format) -> Rendered {
    match format {
        Format::Json => json(r),
        Format::Csv => {
            let mut s = String::from(
                "name,dim,kind,samples,rejections,homogeneity_residual,homogeneity_pass,min_eigenvalue_ratio,min_eigenvalue,convexity_pass,max_beta_norm\n",
            );
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:e},{},{:e},{:e},{},{}",
                r.name,
                r.dim,
                r.kind,
                r.samples,
                r.rejections,
                r.homogeneity_residual,
                r.homogeneity_pass,
                r.min_eigenvalue_ratio,
                r.min_eigenvalue,
                r.convexity_pass,
                r.max_beta_norm.map(|b| b.to_string()).unwrap_or_default()
            );
            csv(s)
        }
        Format::Markdown => {
            let pass = |b: bool| if b { "pass" } else { "FAIL" };
            let mut s = String::new();
            let _ = writeln!(s, "## {}\n", r.name);
            let _ = writeln!(s, "- dim {}, kind {}", r.dim, r.kind);
            let _ = writeln!(s, "- domain {:?} .. {:?}", r.domain_min, r.domain_max);
            if !r.notes.is_empty() {
                let _ = writeln!(s, "- notes: {}", r.notes.replace('\n', " "));
            }
            let _ = writeln!(s, "- sample: {} points, seed {}, {} rejected", r.samples, r.seed, r.rejections);
            let _ = writeln!(
                s,
                "- homogeneity {} (worst Euler residual {:.3e})",
                pass(r.homogeneity_pass),
                r.homogeneity_residual
            );
            let _ = writeln!(
                s,
                "- convexity {} (smallest eigenvalue {:.4e}, smallest eigenvalue ratio {:.4e})",
                pass(r.convexity_pass),
                r.min_eigenvalue,
                r.min_eigenvalue_ratio
            );
            if let Some(b) = r.max_beta_norm {
                let _ = writeln!(s, "- largest |beta|_alpha {b:.6}");
            }
            Rendered::markdown(s)
        }
    }
}

fn index_label(idx: &[usize]) -> String {
    idx.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join("")
}

/// Flattens nested component arrays into `(index, value)` pairs.
fn flatten(v: &serde_json::Value, prefix: &mut Vec<usize>, out: &mut Vec<(String, f64)>) {
    match v {
        serde_json::Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                prefix.push(i);
                flatten(item, prefix, out);
                prefix.pop();
            }
        }
        other => out.push((index_label(prefix), other.as_f64().unwrap_or(f64::NAN))),
    }
}

pub fn tensor_csv(values: &[TensorOut]) -> Rendered {
    let mut s = String::from("point,quantity,index,value\n");
    for (k, v) in values.iter().enumerate() {
        match v {
            TensorOut::Dump(d) => {
                let mut comps = Vec::new();
                flatten(&d.components, &mut Vec::new(), &mut comps);
                for (idx, val) in comps {
                    let _ = writeln!(s, "{k},{},{idx},{val:e}", d.quantity);
                }
            }
            TensorOut::Flag(f) => {
                let _ = writeln!(s, "{k},flag,,{:e}", f.value);
            }
        }
    }
    csv(s)
}

pub fn tensor_markdown(values: &[TensorOut]) -> Rendered {
    let mut s = String::new();
    for v in values {
        match v {
            TensorOut::Dump(d) => {
                let _ = writeln!(s, "### {} at {}\n", d.quantity, d.point);
                let _ = writeln!(
                    s,
                    "norms: raw {:.6e}, g {:.6e}, scale-free {:.6e}\n",
                    d.norms.raw, d.norms.g, d.norms.scale_free
                );
                let _ = writeln!(s, "| index | value |\n|---|---|");
                let mut comps = Vec::new();
                flatten(&d.components, &mut Vec::new(), &mut comps);
                for (idx, val) in comps {
                    let _ = writeln!(s, "| {idx} | {val:.10e} |");
                }
                for w in &d.warnings {
                    let _ = writeln!(s, "\nwarning: {w}");
                }
                s.push('\n');
            }
            TensorOut::Flag(f) => {
                let _ = writeln!(s, "- flag curvature at {} along {:?}: {:.10}", f.point, f.u, f.value);
            }
        }
    }
    Rendered::markdown(s)
}

pub fn classify_csv(r: &ClassificationReport) -> Rendered {
    let mut s = String::from(
        "spec,index,x,y,f,cartan,matsumoto,p_reducibility,landsberg,mean_landsberg,stretch,berwald,k,k_residual,lambda,gp_residual\n",
    );
    for p in &r.points {
        let join = |v: &[f64]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e}",
            r.spec,
            p.index,
            join(&p.point.x),
            join(&p.point.y),
            p.f,
            p.cartan,
            p.matsumoto,
            p.p_reducibility,
            p.landsberg,
            p.mean_landsberg,
            p.stretch,
            p.berwald,
            p.k,
            p.k_residual,
            p.gp.lambda.map(|l| format!("{l:e}")).unwrap_or_default(),
            p.gp.residual
        );
    }
    csv(s)
}

pub fn verify_csv(r: &VerificationReport) -> Rendered {
    let mut s = String::from("spec,identity,status,worst_residual,tolerance,points,excluded\n");
    for c in &r.checks {
        let _ = writeln!(
            s,
            "{},{},{},{:e},{:e},{},{}",
            r.spec,
            c.id,
            status_name(c.status),
            c.worst_residual,
            c.tolerance,
            c.points.len(),
            c.excluded
        );
    }
    csv(s)
}

fn geodesic_header(dim: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=dim).map(|i| format!("x{i}")));
    cols.extend((1..=dim).map(|i| format!("y{i}")));
    cols.push("F".into());
    cols
}

pub fn geodesic_csv(trace: &GeodesicTrace, dim: usize) -> Rendered {
    let mut s = geodesic_header(dim).join(",");
    s.push('\n');
    for st in &trace.states {
        let mut row = vec![st.t.to_string()];
        row.extend(st.x.iter().chain(&st.y).map(|v| v.to_string()));
        row.push(st.f.to_string());
        s.push_str(&row.join(","));
        s.push('\n');
    }
    csv(s)
}

pub fn geodesic_markdown(trace: &GeodesicTrace, dim: usize) -> Rendered {
    let header = geodesic_header(dim);
    let mut s = format!(
        "{} states, truncated: {}, max relative drift of F: {:.3e}\n\n",
        trace.states.len(),
        trace.truncated,
        trace.max_relative_drift
    );
    let _ = writeln!(s, "| {} |", header.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
    for st in &trace.states {
        let mut row = vec![format!("{:.6}", st.t)];
        row.extend(st.x.iter().chain(&st.y).map(|v| format!("{v:.10}")));
        row.push(format!("{:.12}", st.f));
        let _ = writeln!(s, "| {} |", row.join(" | "));
    }
    Rendered::markdown(s)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: &'a [String],
    exit_code: u8,
    files: Vec<String>,
}

/// Writes each report to `dir` and a `manifest.json` listing them.
pub fn write_out(
    dir: &Path,
    command: &str,
    args: &[String],
    reports: &[(String, Rendered)],
    exit_code: u8,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    for (label, r) in reports {
        let name = format!("{command}-{label}.{}", r.format.extension());
        fs::write(dir.join(&name), &r.text).with_context(|| format!("writing {name}"))?;
        files.push(name);
    }
    let manifest = Manifest {
        command,
        args,
        exit_code,
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text).context("writing manifest.json")?;
    Ok(())
}
