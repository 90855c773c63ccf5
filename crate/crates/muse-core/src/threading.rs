//! Intra-op worker control.
//!
//! The thread count comes from the `MUSE_THREADS` environment variable
//! (0 or 1 = single-threaded deterministic mode) and can be overridden in
//! process with [`set_threads`]. Parallel sections partition work by output
//! item, so results are bitwise-identical for a fixed thread count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

static OVERRIDE: AtomicUsize = AtomicUsize::new(usize::MAX);
static FROM_ENV: OnceLock<usize> = OnceLock::new();

fn env_threads() -> usize {
    *FROM_ENV.get_or_init(|| {
        match std::env::var("MUSE_THREADS") {
            Ok(v) => v.trim().parse::<usize>().unwrap_or(1),
            Err(_) => std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
        }
    })
}

/// Effective worker count; 0 and 1 both mean sequential execution.
pub fn threads() -> usize {
    let o = OVERRIDE.load(Ordering::Relaxed);
    if o != usize::MAX {
        o
    } else {
        env_threads()
    }
}

/// Override the worker count for this process (tests, CLI flags).
pub fn set_threads(n: usize) {
    OVERRIDE.store(n, Ordering::Relaxed);
}

/// Run `body` over `items` disjoint output chunks of `chunk_len` elements each.
/// `body(item_index, chunk)` must fully determine the chunk from the index, so
/// the partitioning across workers cannot affect results.
pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk_len: usize, body: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    let items = if chunk_len == 0 { 0 } else { out.len() / chunk_len };
    debug_assert_eq!(items * chunk_len, out.len());
    let workers = threads().min(items.max(1));
    if workers <= 1 || items <= 1 {
        for (i, c) in out.chunks_mut(chunk_len).enumerate() {
            body(i, c);
        }
        return;
    }
    let per = items.div_ceil(workers);
    std::thread::scope(|s| {
        let mut rest = out;
        let mut start = 0usize;
        let body = &body;
        while !rest.is_empty() {
            let take = (per * chunk_len).min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            rest = tail;
            let first = start;
            start += take / chunk_len;
            s.spawn(move || {
                for (j, c) in head.chunks_mut(chunk_len).enumerate() {
                    body(first + j, c);
                }
            });
        }
    });
}

/// Fold per-item partial buffers into `acc`. Each worker accumulates its item
/// range into a private buffer; buffers are then summed in worker order, so a
/// fixed thread count gives a fixed reduction order.
pub fn fold_items_f<E, F>(acc: &mut [E], items: usize, body: F)
where
    E: crate::elem::Elem,
    F: Fn(usize, &mut [E]) + Sync,
{
    let workers = threads().min(items.max(1));
    if workers <= 1 || items <= 1 {
        for i in 0..items {
            body(i, acc);
        }
        return;
    }
    let per = items.div_ceil(workers);
    let len = acc.len();
    let mut partials: Vec<Vec<E>> = Vec::with_capacity(workers);
    std::thread::scope(|s| {
        let body = &body;
        let mut handles = Vec::new();
        let mut start = 0usize;
        while start < items {
            let end = (start + per).min(items);
            handles.push(s.spawn(move || {
                let mut buf = vec![E::ZERO; len];
                for i in start..end {
                    body(i, &mut buf);
                }
                buf
            }));
            start = end;
        }
        for h in handles {
            partials.push(h.join().expect("worker panicked"));
        }
    });
    for buf in partials {
        for (a, b) in acc.iter_mut().zip(buf) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_map_covers_all_items() {
        set_threads(3);
        let mut out = vec![0usize; 12];
        for_each_chunk_mut(&mut out, 2, |i, c| {
            c[0] = i * 10;
            c[1] = i * 10 + 1;
        });
        set_threads(1);
        assert_eq!(out[10], 50);
        assert_eq!(out[5], 21);
    }

    #[test]
    fn fold_matches_sequential() {
        set_threads(4);
        let mut acc = vec![0.0f64; 3];
        fold_items_f(&mut acc, 10, |i, buf| {
            buf[i % 3] += i as f64;
        });
        set_threads(1);
        let mut want = vec![0.0f64; 3];
        for i in 0..10 {
            want[i % 3] += i as f64;
        }
        assert_eq!(acc, want);
    }
}
