use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

/// Maps `f` over `items` on up to `workers` threads, returning results in
/// input order. On failure, returns the error of the lowest failing index;
/// no new items are started once any item has failed.
pub fn par_map<T, R, E, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<R, E>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                if out.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                slots.lock().expect("slot lock")[i] = Some(out);
            });
        }
    });
    let slots = slots.into_inner().expect("slot lock");
    let mut results = Vec::with_capacity(items.len());
    let mut first_missing = None;
    for (i, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(Ok(v)) => results.push(v),
            Some(Err(e)) => return Err(e),
            None => {
                first_missing.get_or_insert(i);
            }
        }
    }
    // Items are claimed in index order, so a gap can only follow a failure.
    assert!(first_missing.is_none(), "unfinished item without an error");
    Ok(results)
}
