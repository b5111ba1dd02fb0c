//! Runs independent trials on worker threads.
//!
//! Jobs are dealt to workers up front, so each worker owns its inputs and
//! state. Completed results travel back over a channel and the collector
//! restores submission order, making the output independent of scheduling.

use std::sync::mpsc;
use std::thread;

/// Applies `work` to every job on up to `threads` workers and returns the
/// results in job order.
pub fn run_parallel<J, T, F>(jobs: Vec<J>, threads: usize, work: F) -> Vec<T>
where
    J: Send,
    T: Send,
    F: Fn(usize, J) -> T + Sync,
{
    let n = jobs.len();
    let workers = threads.clamp(1, n.max(1));
    let mut buckets: Vec<Vec<(usize, J)>> = (0..workers).map(|_| Vec::new()).collect();
    for (i, job) in jobs.into_iter().enumerate() {
        buckets[i % workers].push((i, job));
    }
    let (tx, rx) = mpsc::channel();
    thread::scope(|scope| {
        for bucket in buckets {
            let tx = tx.clone();
            let work = &work;
            scope.spawn(move || {
                for (i, job) in bucket {
                    // The collector outlives every worker inside the scope.
                    tx.send((i, work(i, job))).expect("collector alive");
                }
            });
        }
        drop(tx);
        let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
        for (i, result) in rx {
            slots[i] = Some(result);
        }
        slots
            .into_iter()
            .map(|s| s.expect("every job reports a result"))
            .collect()
    })
}
