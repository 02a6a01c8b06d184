use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Applies `f` to every item on at most `workers` threads. Results come back
/// in input order whatever the scheduling, so output stays deterministic as
/// long as `f` depends only on its arguments.
pub fn map_ordered<T, R, F>(workers: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every item was processed")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_worker_count() {
        let items: Vec<u64> = (0..97).collect();
        let work = |i: usize, x: &u64| (0..(x % 7) * 1000).fold(i as u64, |a, b| a.wrapping_mul(31).wrapping_add(b));
        let one = map_ordered(1, &items, work);
        for w in [2, 4, 200] {
            assert_eq!(map_ordered(w, &items, work), one);
        }
        assert!(map_ordered(3, &[] as &[u64], work).is_empty());
    }
}
