//! Peak heap use while streaming a dump. Kept in its own test binary so the
//! counting allocator sees no other test's allocations.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use latent_terms::activation_io::{read_dump, DumpWriter};
use latent_terms::TokenMatrix;

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
            PEAK.fetch_max(now, Ordering::SeqCst);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

#[test]
fn reading_ten_thousand_records_stays_near_one_record() {
    let d = 128;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.ltad");
    let small = TokenMatrix::zeros(4, d);
    let large = TokenMatrix::new(512, d, (0..512 * d).map(|i| i as f32).collect()).unwrap();
    let mut writer = DumpWriter::create(&path, d).unwrap();
    for i in 0..10_000 {
        let tokens = if i == 5_000 { &large } else { &small };
        writer.write_record(&format!("doc{i:05}"), tokens).unwrap();
    }
    assert_eq!(writer.finish().unwrap(), 10_000);
    drop((small, large));

    let largest = 512 * d * std::mem::size_of::<f32>();
    let baseline = CURRENT.load(Ordering::SeqCst);
    PEAK.store(baseline, Ordering::SeqCst);
    let mut count = 0;
    let mut tokens = 0;
    for record in read_dump(&path).unwrap() {
        let (_, m) = record.unwrap();
        count += 1;
        tokens += m.rows();
    }
    let peak = PEAK.load(Ordering::SeqCst) - baseline;
    assert_eq!(count, 10_000);
    assert_eq!(tokens, 9_999 * 4 + 512);
    assert!(
        peak < 2 * largest,
        "peak {peak} bytes vs largest record {largest}"
    );
}
