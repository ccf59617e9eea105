//! Scoped worker threads with results merged in index order, and the
//! threaded evaluation protocol built on them.

use std::env;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use collabdqn_core::env::Scan;
use collabdqn_core::eval::{self, EvalConfig, EvalReport, QFunction};

use crate::error::{Error, Result};

pub const THREADS_VAR: &str = "COLLABDQN_THREADS";

/// Worker count: 1 when `deterministic`, else the available parallelism
/// capped by `COLLABDQN_THREADS` when set.
pub fn worker_count(deterministic: bool) -> Result<usize> {
    if deterministic {
        return Ok(1);
    }
    let available = thread::available_parallelism().map_or(1, |n| n.get());
    match env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n.min(available)),
            _ => Err(Error::Config(format!("{THREADS_VAR}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(available),
    }
}

/// Runs `f(0..n)` on up to `workers` threads. Results come back in index
/// order; if any call fails, the error of the lowest failing index wins.
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every index is visited")).collect()
}

/// The evaluation protocol with `(volume, start)` jobs spread over
/// `workers` threads. The report is identical for every worker count.
pub fn evaluate<Q: QFunction + Sync + ?Sized>(q: &Q, scans: &[Scan], landmarks: &[String], cfg: &EvalConfig, workers: usize) -> Result<EvalReport> {
    if landmarks.len() != q.agent_count() {
        return Err(collabdqn_core::Error::AgentCountMismatch {
            expected: q.agent_count(),
            actual: landmarks.len(),
        }
        .into());
    }
    eval::check_annotations(scans, landmarks)?;
    let jobs = eval::jobs(scans);
    let per_job = map_indexed(jobs.len(), workers, |i| {
        let (v, s, p) = jobs[i];
        Ok(eval::run_job(q, &scans[v], landmarks, s, p, cfg)?)
    })?;
    Ok(EvalReport::from_episodes(eval::protocol(cfg), landmarks, per_job.into_iter().flatten().collect())?)
}
