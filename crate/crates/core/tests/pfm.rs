//! PFM against reference files produced by a separate minimal writer
//! (`data/*.pfm`, written with Python's `struct`).

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_depth::pfm::{read_pfm, write_pfm};
use sparse_depth::Raster;

fn golden(name: &str) -> Vec<u8> {
    std::fs::read(format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

#[test]
fn grayscale_matches_reference_bytes() {
    let (w, h) = (4, 3);
    let mut r = Raster::filled(w, h, 1, 0.0);
    for y in 0..h {
        for x in 0..w {
            r.set(0, x, y, 0.25 * x as f64 - 1.5 * y as f64 + 0.125);
        }
    }
    let bytes = golden("gray_4x3.pfm");
    assert_eq!(write_pfm(&r).unwrap(), bytes);
    assert_eq!(read_pfm(&bytes).unwrap(), r);
}

#[test]
fn color_matches_reference_bytes() {
    let (w, h) = (3, 2);
    let mut r = Raster::filled(w, h, 3, 0.0);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                r.set(c, x, y, 100.0 * c as f64 + 10.0 * y as f64 + x as f64 + 0.5);
            }
        }
    }
    let bytes = golden("color_3x2.pfm");
    assert_eq!(write_pfm(&r).unwrap(), bytes);
    assert_eq!(write_pfm(&read_pfm(&bytes).unwrap()).unwrap(), bytes);
}

proptest! {
    #[test]
    fn f32_rasters_round_trip_exactly(
        w in 1usize..6,
        h in 1usize..6,
        three in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let c = if three { 3 } else { 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * c).map(|_| rng.random_range(-100.0f32..100.0) as f64).collect();
        let r = Raster::new(w, h, c, data).unwrap();
        let bytes = write_pfm(&r).unwrap();
        prop_assert_eq!(bytes.len(), format!("{}\n{w} {h}\n-1.0\n", if three { "PF" } else { "Pf" }).len() + 4 * w * h * c);
        let back = read_pfm(&bytes).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(write_pfm(&back).unwrap(), bytes);
    }
}
