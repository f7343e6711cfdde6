use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use chestsep::bench::time_runs;

struct Counting;

static ALLOCS: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOCS.fetch_add(1, Ordering::SeqCst);
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        ALLOCS.fetch_add(1, Ordering::SeqCst);
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

#[test]
fn harness_allocates_only_its_result_buffer() {
    let mut inside = 0;
    let before = ALLOCS.load(Ordering::SeqCst);
    let runs = time_runs(2, 10, || {
        let start = ALLOCS.load(Ordering::SeqCst);
        let v: Vec<f64> = std::hint::black_box(vec![1.0; 4096]);
        std::hint::black_box(v.iter().sum::<f64>());
        drop(v);
        inside += ALLOCS.load(Ordering::SeqCst) - start;
    });
    let total = ALLOCS.load(Ordering::SeqCst) - before;
    assert_eq!(runs.len(), 10);
    assert_eq!(inside, 12);
    assert_eq!(total - inside, 1);
}
