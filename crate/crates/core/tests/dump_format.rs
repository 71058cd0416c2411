use latent_terms::activation_io::{read_dump, validate_dump, write_dump, DumpRecord};
use latent_terms::TokenMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn random_records(seed: u64, n: usize, d: usize) -> Vec<DumpRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let rows = rng.random_range(1..12);
            let data = (0..rows * d)
                .map(|_| rng.random_range(-10.0f32..10.0))
                .collect();
            (format!("doc-{i}"), TokenMatrix::new(rows, d, data).unwrap())
        })
        .collect()
}

#[test]
fn rewrite_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.ltad");
    let second = dir.path().join("b.ltad");
    let records = random_records(11, 100, 32);
    assert_eq!(write_dump(&records, &first).unwrap(), 100);
    let back: Vec<DumpRecord> = read_dump(&first).unwrap().map(Result::unwrap).collect();
    assert_eq!(back, records);
    assert_eq!(write_dump(&back, &second).unwrap(), 100);
    let digest = |p: &std::path::Path| Sha256::digest(std::fs::read(p).unwrap());
    assert_eq!(digest(&first), digest(&second));
}

#[test]
fn report_on_valid_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.ltad");
    let records: Vec<DumpRecord> = [2usize, 5, 1]
        .iter()
        .enumerate()
        .map(|(i, &n)| (format!("d{i}"), TokenMatrix::zeros(n, 32)))
        .collect();
    write_dump(&records, &path).unwrap();
    let report = validate_dump(&path);
    assert_eq!(report.records, 3);
    assert_eq!(report.d, 32);
    assert_eq!(report.total_tokens, 8);
    assert_eq!(report.min_tokens, Some(1));
    assert_eq!(report.max_tokens, Some(5));
    assert!(report.violations.is_empty());
}

#[test]
fn truncation_anywhere_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ltad");
    let records = random_records(3, 4, 4);
    write_dump(&records, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    // cuts on a record boundary leave a shorter valid dump
    let mut boundaries = vec![12usize];
    for (id, m) in &records {
        boundaries.push(boundaries.last().unwrap() + 8 + id.len() + 4 * m.as_slice().len());
    }
    assert_eq!(*boundaries.last().unwrap(), bytes.len());
    for cut in (12..bytes.len()).filter(|c| !boundaries.contains(c)) {
        let p = dir.path().join("cut.ltad");
        std::fs::write(&p, &bytes[..cut]).unwrap();
        let report = validate_dump(&p);
        assert!(!report.is_valid(), "cut at {cut} went unnoticed");
        let failed = read_dump(&p).unwrap().any(|r| r.is_err());
        assert!(failed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn round_trip_is_bitwise(
        d in 1usize..8,
        shapes in prop::collection::vec(1usize..6, 1..6),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<DumpRecord> = shapes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                // arbitrary bit patterns, including subnormals and negative zero
                let data = (0..n * d)
                    .map(|_| {
                        let v = f32::from_bits(rng.random());
                        if v.is_finite() { v } else { -0.0 }
                    })
                    .collect();
                (format!("r{i}"), TokenMatrix::new(n, d, data).unwrap())
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ltad");
        write_dump(&records, &path).unwrap();
        let back: Vec<DumpRecord> = read_dump(&path).unwrap().map(Result::unwrap).collect();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            prop_assert_eq!(&a.0, &b.0);
            let bits = |m: &TokenMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.1), bits(&b.1));
        }
    }
}
