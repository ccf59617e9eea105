//! Text and CSV renderings of an evaluation report.
//!
//! The CSV holds one row per episode (`landmark,volume_id,start_index,
//! error_mm`) after `#` comment lines carrying the statistics convention,
//! the protocol and the published reference values. Errors are written in
//! shortest round-trip form, so [`parse_csv`] rebuilds the report exactly.

use std::fmt::Write as _;

use collabdqn_core::eval::{EpisodeError, EvalReport, Protocol};

use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 4] = ["landmark", "volume_id", "start_index", "error_mm"];
pub const STD_CONVENTION: &str = "std convention: population (divides by n)";

/// A published clinical result, kept for context only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub dataset: &'static str,
    pub method: &'static str,
    pub landmark: &'static str,
    pub mean: f64,
    pub std: f64,
}

const fn r(dataset: &'static str, method: &'static str, landmark: &'static str, mean: f64, std: f64) -> ReferenceRow {
    ReferenceRow {
        dataset,
        method,
        landmark,
        mean,
        std,
    }
}

/// Published errors in mm on clinical brain MRI, fetal brain ultrasound and
/// cardiac MRI. These data are not available here and the values are not
/// reproduced by any run of this crate.
pub const REFERENCE: &[ReferenceRow] = &[
    r("fetal brain US", "Supervised CNN", "CSP", 5.47, 4.23),
    r("brain MRI", "DQN", "AC", 2.46, 1.44),
    r("brain MRI", "DQN", "PC", 2.05, 1.14),
    r("fetal brain US", "DQN", "RC", 3.37, 1.54),
    r("fetal brain US", "DQN", "LC", 3.25, 1.59),
    r("fetal brain US", "DQN", "CSP", 3.66, 2.11),
    r("brain MRI", "Collab DQN", "AC", 0.93, 0.18),
    r("brain MRI", "Collab DQN", "PC", 1.05, 0.25),
    r("fetal brain US", "Collab DQN", "RC", 2.52, 2.25),
    r("fetal brain US", "Collab DQN", "LC", 2.41, 1.52),
    r("fetal brain US", "Collab DQN", "CSP", 3.78, 5.55),
    r("brain MRI", "Collab DQN, 3 agents", "AC", 0.94, 0.17),
    r("brain MRI", "Collab DQN, 3 agents", "PC", 0.96, 0.20),
    r("brain MRI", "Collab DQN, 3 agents", "Landmark 3", 1.45, 0.51),
    r("brain MRI", "Collab DQN, 5 agents", "AC", 0.98, 0.25),
    r("brain MRI", "Collab DQN, 5 agents", "PC", 0.90, 0.18),
    r("brain MRI", "Collab DQN, 5 agents", "Landmark 3", 1.39, 0.45),
    r("brain MRI", "Collab DQN, 5 agents", "Landmark 4", 1.42, 0.90),
    r("brain MRI", "Collab DQN, 5 agents", "Landmark 5", 1.72, 0.61),
    r("cardiac MRI", "Inter-observer", "AP", 5.79, 3.28),
    r("cardiac MRI", "Inter-observer", "MV", 5.30, 2.98),
    r("cardiac MRI", "Decision forest", "AP", 6.74, 4.12),
    r("cardiac MRI", "Decision forest", "MV", 6.32, 3.95),
    r("cardiac MRI", "DQN", "AP", 4.47, 2.64),
    r("cardiac MRI", "DQN", "MV", 5.73, 4.16),
    r("cardiac MRI", "DQN, batch x2", "AP", 4.30, 12.07),
    r("cardiac MRI", "DQN, batch x2", "MV", 5.01, 4.49),
    r("cardiac MRI", "DQN, iterations x2", "AP", 4.78, 13.87),
    r("cardiac MRI", "DQN, iterations x2", "MV", 5.70, 18.11),
    r("cardiac MRI", "Collab DQN", "AP", 3.96, 5.07),
    r("cardiac MRI", "Collab DQN", "MV", 4.87, 0.26),
];

const REFERENCE_TITLE: &str = "Published clinical results in mm, for reference only (different data; not reproduced here)";

fn ladder_text(p: &Protocol, sep: &str) -> String {
    p.ladder.iter().map(u32::to_string).collect::<Vec<_>>().join(sep)
}

/// Header lines and one row per landmark: `AC  0.93 ± 0.18`.
pub fn render_summary(report: &EvalReport) -> String {
    let p = &report.protocol;
    let mut out = String::new();
    let volumes = report.landmarks.first().map_or(0, |l| l.per_volume.len());
    let _ = writeln!(out, "Landmark error in mm, mean ± std over {volumes} volumes x {} starts", p.starts_per_volume);
    let _ = writeln!(out, "{STD_CONVENTION}");
    let _ = writeln!(
        out,
        "protocol: {} starts per volume, {} frames, step ladder {}, ROI {}",
        p.starts_per_volume,
        p.max_frames,
        ladder_text(p, "-"),
        p.roi_extent
    );
    if report.landmarks.is_empty() {
        return out;
    }
    let w = report.landmarks.iter().map(|l| l.name.chars().count()).max().unwrap_or(0);
    out.push('\n');
    for l in &report.landmarks {
        let _ = writeln!(out, "{:<w$}  {:.2} ± {:.2}", l.name, l.stats.mean, l.stats.std);
    }
    out
}

/// The summary, then medians, per-volume means and the reference block.
/// With no landmarks only the header is written.
pub fn render_text(report: &EvalReport) -> String {
    let mut out = render_summary(report);
    if report.landmarks.is_empty() {
        return out;
    }
    let w = report.landmarks.iter().map(|l| l.name.chars().count()).max().unwrap_or(0);
    out.push_str("\nmedian\n");
    for l in &report.landmarks {
        let _ = writeln!(out, "{:<w$}  {:.2}", l.name, l.stats.median);
    }
    out.push_str("\nper-volume mean\n");
    let vw = report.landmarks[0].per_volume.iter().map(|(v, _)| v.chars().count()).max().unwrap_or(0).max(6);
    let _ = write!(out, "{:<vw$}", "volume");
    for l in &report.landmarks {
        let _ = write!(out, "  {:>8}", l.name);
    }
    out.push('\n');
    for (i, (v, _)) in report.landmarks[0].per_volume.iter().enumerate() {
        let _ = write!(out, "{v:<vw$}");
        for l in &report.landmarks {
            let _ = write!(out, "  {:>8.2}", l.per_volume[i].1);
        }
        out.push('\n');
    }
    let _ = writeln!(out, "\n{REFERENCE_TITLE}");
    let mw = REFERENCE.iter().map(|r| r.dataset.len() + 2 + r.method.len()).max().unwrap_or(0);
    let lw = REFERENCE.iter().map(|r| r.landmark.len()).max().unwrap_or(0);
    for r in REFERENCE {
        let label = format!("{}, {}", r.dataset, r.method);
        let _ = writeln!(out, "  {label:<mw$}  {:<lw$}  {:.2} ± {:.2}", r.landmark, r.mean, r.std);
    }
    out
}

pub fn render_csv(report: &EvalReport) -> String {
    let p = &report.protocol;
    let mut out = String::new();
    let _ = writeln!(out, "# landmark localization errors in mm; {STD_CONVENTION}");
    let _ = writeln!(
        out,
        "# protocol: starts_per_volume={} max_frames={} ladder={} roi_extent={}",
        p.starts_per_volume,
        p.max_frames,
        ladder_text(p, ";"),
        p.roi_extent
    );
    for l in &report.landmarks {
        let _ = writeln!(
            out,
            "# summary: landmark={} mean={:.4} std={:.4} median={:.4}",
            l.name, l.stats.mean, l.stats.std, l.stats.median
        );
    }
    let _ = writeln!(out, "# {REFERENCE_TITLE}");
    for r in REFERENCE {
        let _ = writeln!(out, "# reference: {} | {} | {} | {:.2} | {:.2}", r.dataset, r.method, r.landmark, r.mean, r.std);
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for e in &report.episodes {
        w.write_record([e.landmark.as_str(), e.volume_id.as_str(), &e.start_index.to_string(), &e.error_mm.to_string()])
            .expect("in-memory write");
    }
    let body = w.into_inner().expect("in-memory flush");
    out.push_str(&String::from_utf8(body).expect("CSV of UTF-8 fields"));
    out
}

fn parse_protocol(line: &str) -> Option<Protocol> {
    let mut p = Protocol {
        starts_per_volume: 0,
        max_frames: 0,
        ladder: Vec::new(),
        roi_extent: 0,
    };
    let mut seen = 0;
    for field in line.split_whitespace() {
        let (key, value) = field.split_once('=')?;
        match key {
            "starts_per_volume" => p.starts_per_volume = value.parse().ok()?,
            "max_frames" => p.max_frames = value.parse().ok()?,
            "ladder" => p.ladder = value.split(';').map(str::parse).collect::<Result<_, _>>().ok()?,
            "roi_extent" => p.roi_extent = value.parse().ok()?,
            _ => return None,
        }
        seen += 1;
    }
    (seen == 4).then_some(p)
}

/// Rebuilds a report from [`render_csv`] output. `label` names the source
/// in errors.
pub fn parse_csv(text: &str, label: &std::path::Path) -> Result<EvalReport> {
    let bad = |detail: String| Error::Report {
        path: label.to_path_buf(),
        detail,
    };
    let protocol = text
        .lines()
        .find_map(|l| l.strip_prefix("# protocol: "))
        .ok_or_else(|| bad("missing protocol line".into()))?;
    let protocol = parse_protocol(protocol).ok_or_else(|| bad(format!("unreadable protocol line `{protocol}`")))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(bad(format!("columns {:?}, expected {CSV_COLUMNS:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut episodes = Vec::new();
    let mut landmarks: Vec<String> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let field = |c: usize| row.get(c).ok_or_else(|| bad(format!("row {i}: missing column {}", CSV_COLUMNS[c])));
        let landmark = field(0)?.to_string();
        if !landmarks.contains(&landmark) {
            landmarks.push(landmark.clone());
        }
        episodes.push(EpisodeError {
            landmark,
            volume_id: field(1)?.to_string(),
            start_index: field(2)?.parse().map_err(|e| bad(format!("row {i}: start_index: {e}")))?,
            error_mm: field(3)?.parse().map_err(|e| bad(format!("row {i}: error_mm: {e}")))?,
        });
    }
    Ok(EvalReport::from_episodes(protocol, &landmarks, episodes)?)
}
