//! Header fuzzing for the NIfTI and FVB1 readers. A counting allocator
//! records the largest single allocation made while parsing each input.
//! Including this module installs that allocator for the whole test binary.

use std::alloc::{GlobalAlloc, Layout, System};
use std::panic;
use std::sync::atomic::{AtomicUsize, Ordering};

use featreg::{fvb, nifti};
use featreg_core::{Dims, DisplacementField, LabelVolume, SliceFeatureStack, Spacing, TokenGrid, Volume3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Counting;

static LARGEST: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        LARGEST.fetch_max(layout.size(), Ordering::Relaxed);
        System.alloc(layout)
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        LARGEST.fetch_max(layout.size(), Ordering::Relaxed);
        System.alloc_zeroed(layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        LARGEST.fetch_max(new_size, Ordering::Relaxed);
        System.realloc(ptr, layout, new_size)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

/// Parsed samples widen to at most 8 bytes per input byte (u8 to f64).
fn allocation_bound(input_len: usize) -> usize {
    8 * input_len + 4096
}

fn nifti_seeds() -> Vec<Vec<u8>> {
    let d = Dims::new(5, 4, 3);
    let sp = Spacing::new(1.0, 0.5, 2.0).unwrap();
    let vol = Volume3D::from_fn(d, sp, |x, y, z| (x + 2 * y + 3 * z) as f64 * 0.5).unwrap();
    let labels = LabelVolume::from_fn(d, sp, |x, _, _| (x % 3) as u32).unwrap();
    let wide = LabelVolume::from_fn(d, sp, |x, _, _| 300 * x as u32).unwrap();
    let field = DisplacementField::from_fn(d, sp, |x, y, z| [x as f64, -(y as f64), 0.25 * z as f64]).unwrap();
    vec![
        nifti::write_volume(&vol).unwrap(),
        nifti::write_labels(&labels).unwrap(),
        nifti::write_labels(&wide).unwrap(),
        nifti::write_field(&field).unwrap(),
    ]
}

fn fvb_seeds() -> Vec<Vec<u8>> {
    let grid = |v: f64| Some(TokenGrid::new(3, 2, 4, vec![v; 24]).unwrap());
    let dense = SliceFeatureStack::new(3, 2, 4, 1, "desk-v1".into(), vec![grid(1.0), grid(2.0)], vec![true; 2]).unwrap();
    let strided = SliceFeatureStack::new(
        3,
        2,
        4,
        2,
        "desk-v1".into(),
        vec![grid(1.0), None, grid(0.5), None, grid(-1.0)],
        vec![true, false, true, false, true],
    )
    .unwrap();
    vec![fvb::write_fvb(&dense).unwrap(), fvb::write_fvb(&strided).unwrap()]
}

/// Field offsets worth hitting with boundary values.
const NIFTI_FIELDS: [(usize, usize); 10] = [
    (0, 4),
    (40, 2),
    (42, 2),
    (44, 2),
    (46, 2),
    (50, 2),
    (70, 2),
    (72, 2),
    (108, 4),
    (112, 4),
];
const FVB_FIELDS: [(usize, usize); 6] = [(4, 4), (8, 4), (12, 4), (16, 4), (20, 4), (24, 4)];

fn interesting(r: &mut ChaCha8Rng, width: usize) -> Vec<u8> {
    let v: i64 = match r.gen_range(0..8) {
        0 => 0,
        1 => -1,
        2 => 1,
        3 => i16::MAX as i64,
        4 => i32::MAX as i64,
        5 => u32::MAX as i64,
        6 => r.gen_range(-1000..1000),
        _ => r.gen(),
    };
    let mut b = v.to_le_bytes()[..width].to_vec();
    if r.gen_bool(0.2) && width == 4 {
        let f: f32 = [f32::NAN, f32::INFINITY, -0.0, 1e30, 352.5][r.gen_range(0..5)];
        b = f.to_le_bytes().to_vec();
    }
    if r.gen_bool(0.3) {
        b.reverse();
    }
    b
}

fn mutate(r: &mut ChaCha8Rng, seed: &[u8], fields: &[(usize, usize)], header_len: usize) -> Vec<u8> {
    let mut b = seed.to_vec();
    match r.gen_range(0..6) {
        // Pure noise of a plausible length.
        0 => {
            let n = r.gen_range(0..2 * seed.len());
            b = (0..n).map(|_| r.gen()).collect();
        }
        1 => {
            for _ in 0..r.gen_range(1..8) {
                let i = r.gen_range(0..header_len.min(b.len()));
                b[i] ^= 1 << r.gen_range(0..8);
            }
        }
        2 => {
            let n = r.gen_range(0..b.len());
            b.truncate(n);
        }
        3 => {
            let extra = r.gen_range(1..64);
            b.extend((0..extra).map(|_| r.gen::<u8>()));
        }
        _ => {
            for _ in 0..r.gen_range(1..4) {
                let (at, width) = fields[r.gen_range(0..fields.len())];
                let v = interesting(r, width);
                b[at..at + width].copy_from_slice(&v);
            }
        }
    }
    b
}

/// Outcome of one fuzz run.
pub struct Report {
    pub cases: usize,
    pub nifti_ok: usize,
    pub fvb_ok: usize,
    pub largest_ratio: f64,
}

fn check<T>(what: &str, case: usize, bytes: &[u8], parse: impl Fn(&[u8]) -> T) -> Result<usize, String> {
    LARGEST.store(0, Ordering::Relaxed);
    let outcome = panic::catch_unwind(panic::AssertUnwindSafe(|| {
        let _ = parse(bytes);
    }));
    let largest = LARGEST.load(Ordering::Relaxed);
    if outcome.is_err() {
        return Err(format!("{what} case {case} panicked on {} bytes", bytes.len()));
    }
    if largest > allocation_bound(bytes.len()) {
        return Err(format!("{what} case {case}: allocated {largest} bytes for a {}-byte input", bytes.len()));
    }
    Ok(largest)
}

/// Mutates valid NIfTI and FVB1 files `cases` times each and parses every
/// result. Fails on a panic or an allocation above the bound.
pub fn run(cases: usize) -> Result<Report, String> {
    let mut r = ChaCha8Rng::seed_from_u64(0x5eed);
    let nifti_seeds = nifti_seeds();
    let fvb_seeds = fvb_seeds();

    // The counter sees the decoded payload of a valid file.
    LARGEST.store(0, Ordering::Relaxed);
    nifti::read_volume(&nifti_seeds[0]).map_err(|e| e.to_string())?;
    if LARGEST.load(Ordering::Relaxed) < 60 * 8 {
        return Err("allocation counter is not recording".into());
    }

    let mut report = Report { cases, nifti_ok: 0, fvb_ok: 0, largest_ratio: 0.0 };
    for case in 0..cases {
        let seed = &nifti_seeds[case % nifti_seeds.len()];
        let bytes = mutate(&mut r, seed, &NIFTI_FIELDS, nifti::HEADER_SIZE);
        let largest = check("nifti", case, &bytes, |b| {
            let _ = nifti::read_volume(b);
            let _ = nifti::read_labels(b);
            let _ = nifti::read_field(b);
        })?;
        report.largest_ratio = report.largest_ratio.max(largest as f64 / bytes.len().max(1) as f64);
        report.nifti_ok += usize::from(nifti::read_nifti(&bytes).is_ok());

        let seed = &fvb_seeds[case % fvb_seeds.len()];
        let bytes = mutate(&mut r, seed, &FVB_FIELDS, fvb::FIXED_HEADER + 5);
        let largest = check("fvb", case, &bytes, fvb::read_fvb)?;
        report.largest_ratio = report.largest_ratio.max(largest as f64 / bytes.len().max(1) as f64);
        report.fvb_ok += usize::from(fvb::read_fvb(&bytes).is_ok());
    }
    Ok(report)
}
