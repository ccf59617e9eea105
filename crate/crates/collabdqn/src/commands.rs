//! The four commands, writing their console output to a caller-supplied
//! stream.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use collabdqn_core::eval::EvalReport;
use collabdqn_core::nn::{Layer, LayerKind};
use collabdqn_core::trainer::{EpisodeRecord, Trainer};

use crate::checkpoint::{self, Descriptor};
use crate::config::{ReportFormat, RunConfig};
use crate::dataset::{self, Manifest, Split};
use crate::error::{Error, Result};
use crate::parallel;
use crate::report;

pub const TEXT_REPORT: &str = "report.txt";
pub const CSV_REPORT: &str = "report.csv";

fn say(out: &mut dyn Write, line: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(line).and_then(|_| out.write_all(b"\n")).map_err(Error::io(Path::new("<stdout>")))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(Error::io(p)),
        _ => Ok(()),
    }
}

/// Writes the dataset described by `config` into `paths.data_dir`.
pub fn generate(config: &RunConfig, force: bool, out: &mut dyn Write) -> Result<Manifest> {
    let workers = parallel::worker_count(config.deterministic)?;
    let dir = &config.paths.data_dir;
    let g = &config.generate;
    let manifest = dataset::generate(dir, &config.synth, g.train_count, g.test_count, force, workers)?;
    say(
        out,
        format_args!(
            "wrote {} train and {} test volumes to {}",
            manifest.train.len(),
            manifest.test.len(),
            dir.display()
        ),
    )?;
    Ok(manifest)
}

fn descriptor(config: &RunConfig) -> Descriptor {
    let t = config.train_config();
    Descriptor {
        agent_count: config.agents,
        roi_extent: t.env.roi_extent,
        arch: t.arch,
    }
}

fn episode_line(rec: &EpisodeRecord) -> String {
    let dist: Vec<String> = rec.final_distance_mm.iter().map(|d| format!("{d:.2}")).collect();
    let loss = rec.mean_loss.map_or("-".to_string(), |l| format!("{l:.5}"));
    format!(
        "episode {:>5}  update {:>7}  eps {:.3}  steps {:>4}  dist_mm [{}]  loss {loss}",
        rec.episode,
        rec.global_step,
        rec.epsilon,
        rec.steps,
        dist.join(", ")
    )
}

/// Trains on the train split, appending one JSON line per episode to
/// `paths.train_log` and saving `paths.checkpoint`. Returns the final
/// update count.
pub fn train(config: &RunConfig, out: &mut dyn Write) -> Result<u64> {
    let tc = config.train_config();
    let workers = parallel::worker_count(config.deterministic)?;
    let scans = dataset::load_split(&config.paths.data_dir, Split::Train, workers)?;
    let ckpt = &config.paths.checkpoint;
    let resume = config.checkpoint.resume;
    let mut trainer = if resume {
        let state = checkpoint::load_expecting(ckpt, &descriptor(config))?;
        Trainer::resume(&scans, &config.landmarks, tc, state)?
    } else {
        Trainer::new(&scans, &config.landmarks, tc)?
    };
    ensure_parent(ckpt)?;
    let log_path = &config.paths.train_log;
    let mut log = open_log(log_path, resume)?;
    say(
        out,
        format_args!(
            "training {} agents on {} volumes from update {}",
            trainer.agent_count(),
            scans.len(),
            trainer.step()
        ),
    )?;
    trainer.warmup()?;
    while !trainer.finished() {
        let rec = trainer.run_episode()?;
        let line = serde_json::to_string(&rec).map_err(Error::json(log_path))?;
        writeln!(log, "{line}").map_err(Error::io(log_path))?;
        say(out, format_args!("{}", episode_line(&rec)))?;
        let every = config.checkpoint.every_episodes;
        if every > 0 && trainer.episode() % every == 0 {
            log.flush().map_err(Error::io(log_path))?;
            checkpoint::save(&trainer.state(), ckpt)?;
        }
    }
    log.flush().map_err(Error::io(log_path))?;
    checkpoint::save(&trainer.state(), ckpt)?;
    say(
        out,
        format_args!("saved {} after {} updates, {} episodes", ckpt.display(), trainer.step(), trainer.episode()),
    )?;
    Ok(trainer.step())
}

/// Runs the 19-start protocol on the test split and writes the reports
/// selected by `format` into `paths.report_dir`.
pub fn evaluate(config: &RunConfig, format: ReportFormat, out: &mut dyn Write) -> Result<EvalReport> {
    let workers = parallel::worker_count(config.deterministic)?;
    let state = checkpoint::load_expecting(&config.paths.checkpoint, &descriptor(config))?;
    let scans = dataset::load_split(&config.paths.data_dir, Split::Test, workers)?;
    let report = parallel::evaluate(&state.net, &scans, &config.landmarks, &config.eval_config(), workers)?;
    let dir = &config.paths.report_dir;
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let text = report::render_text(&report);
    let mut written: Vec<PathBuf> = Vec::new();
    if format.text() {
        let p = dir.join(TEXT_REPORT);
        fs::write(&p, &text).map_err(Error::io(&p))?;
        written.push(p);
    }
    if format.csv() {
        let p = dir.join(CSV_REPORT);
        fs::write(&p, report::render_csv(&report)).map_err(Error::io(&p))?;
        written.push(p);
    }
    out.write_all(report::render_summary(&report).as_bytes()).map_err(Error::io(Path::new("<stdout>")))?;
    for p in written {
        say(out, format_args!("wrote {}", p.display()))?;
    }
    Ok(report)
}

fn kind_text(kind: &LayerKind) -> String {
    match *kind {
        LayerKind::Conv3d {
            in_channels,
            out_channels,
            kernel,
            padding,
        } => format!("conv3d {in_channels}->{out_channels} k{kernel} p{padding}"),
        LayerKind::Dense { in_width, out_width } => format!("dense {in_width}->{out_width}"),
    }
}

/// Prints the layer table, parameter counts and the sharing ratio.
pub fn inspect(path: &Path, out: &mut dyn Write) -> Result<()> {
    let header = checkpoint::inspect(path)?;
    let state = checkpoint::load(path)?;
    let net = &state.net;
    let d = &header.network;
    say(out, format_args!("checkpoint {} (format {})", path.display(), checkpoint::VERSION))?;
    say(
        out,
        format_args!(
            "agents {}  roi {}  updates {}  episodes {}",
            d.agent_count, d.roi_extent, header.step, header.episode
        ),
    )?;
    say(out, format_args!("{:<10} {:<26} {:>10}", "layer", "kind", "params"))?;
    let mut rows: Vec<(String, &Layer)> = net.trunk().layers.iter().enumerate().map(|(i, l)| (format!("trunk.{i}"), l)).collect();
    for k in 0..net.agent_count() {
        rows.extend(net.head(k).layers.iter().enumerate().map(|(i, l)| (format!("head{k}.{i}"), l)));
    }
    for (name, layer) in rows {
        if let Some(p) = layer.params() {
            say(out, format_args!("{name:<10} {:<26} {:>10}", kind_text(&p.kind), p.param_count()))?;
        }
    }
    let c = net.param_count();
    let k = net.agent_count();
    say(out, format_args!("trunk parameters      {}", c.trunk))?;
    say(out, format_args!("parameters per head   {}", c.per_head))?;
    say(out, format_args!("total (shared trunk)  {}", c.total(k)))?;
    say(out, format_args!("total ({k} separate nets) {}", c.separate_total(k)))?;
    say(
        out,
        format_args!("reduction ratio       {:.6} ({:.2}%)", c.reduction_ratio(k), 100.0 * c.reduction_ratio(k)),
    )
}

/// Opens a JSON-lines log, creating its directory.
pub fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    ensure_parent(path)?;
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(Error::io(path))?;
    Ok(BufWriter::new(f))
}
