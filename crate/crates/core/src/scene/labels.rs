use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Number of supervised pixels per image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LabelCount {
    Count(usize),
    Dense,
}

impl LabelCount {
    pub fn resolve(self, pixels: usize) -> usize {
        match self {
            LabelCount::Count(n) => n,
            LabelCount::Dense => pixels,
        }
    }
}

impl fmt::Display for LabelCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelCount::Count(n) => write!(f, "{n}"),
            LabelCount::Dense => f.write_str("dense"),
        }
    }
}

impl FromStr for LabelCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("dense") || s.eq_ignore_ascii_case("d") {
            return Ok(LabelCount::Dense);
        }
        s.parse::<usize>()
            .map(LabelCount::Count)
            .map_err(|_| Error::config(format!("label count must be a positive integer or \"dense\", got {s:?}")))
    }
}

impl Serialize for LabelCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LabelCount::Count(n) => s.serialize_u64(*n as u64),
            LabelCount::Dense => s.serialize_str("dense"),
        }
    }
}

impl<'de> Deserialize<'de> for LabelCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(LabelCount::Count(n as usize)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// Distinct pixels drawn uniformly at random.
    #[default]
    Uniform,
    /// The pixels nearest the image centre, as seen by a forward-pointing range sensor.
    Center,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelPoint {
    pub x: usize,
    pub y: usize,
    /// Ground-truth inverse depth `1/d`.
    pub inv_depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseLabelSet {
    pub width: usize,
    pub height: usize,
    pub points: Vec<LabelPoint>,
}

impl SparseLabelSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Flat pixel indices `y·W + x`.
    pub fn indices(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.y * self.width + p.x).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.inv_depth).collect()
    }
}

/// Draw `count` distinct supervised pixels from `depth`.
pub fn sample_sparse_labels<R: Rng + ?Sized>(depth: &Raster, count: LabelCount, mode: LabelMode, rng: &mut R) -> Result<SparseLabelSet> {
    let (w, h) = (depth.width, depth.height);
    let total = w * h;
    let n = count.resolve(total);
    if n == 0 || n > total {
        return Err(Error::config(format!("cannot draw {n} labels from {total} pixels")));
    }
    let indices: Vec<usize> = if n == total {
        (0..total).collect()
    } else {
        match mode {
            LabelMode::Uniform => {
                let mut idx = rand::seq::index::sample(rng, total, n).into_vec();
                idx.sort_unstable();
                idx
            }
            LabelMode::Center => {
                let (cx, cy) = ((w / 2) as i64, (h / 2) as i64);
                let mut idx: Vec<usize> = (0..total).collect();
                idx.sort_by_key(|&i| {
                    let (dx, dy) = ((i % w) as i64 - cx, (i / w) as i64 - cy);
                    (dx * dx + dy * dy, i)
                });
                idx.truncate(n);
                idx.sort_unstable();
                idx
            }
        }
    };
    let points = indices
        .into_iter()
        .map(|i| LabelPoint {
            x: i % w,
            y: i / w,
            inv_depth: 1.0 / depth.data[i],
        })
        .collect();
    Ok(SparseLabelSet {
        width: w,
        height: h,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(w: usize, h: usize) -> Raster {
        Raster::new(w, h, 1, (0..w * h).map(|i| 1.0 + i as f64 * 0.01).collect()).unwrap()
    }

    #[test]
    fn single_center_label() {
        let d = ramp(8, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = sample_sparse_labels(&d, LabelCount::Count(1), LabelMode::Center, &mut rng).unwrap();
        assert_eq!((l.points[0].x, l.points[0].y), (4, 3));
        assert_eq!(l.points[0].inv_depth, 1.0 / d.get(0, 4, 3));
    }

    #[test]
    fn dense_covers_every_pixel() {
        let d = ramp(5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = sample_sparse_labels(&d, LabelCount::Dense, LabelMode::Uniform, &mut rng).unwrap();
        assert_eq!(l.len(), 20);
    }

    #[test]
    fn too_many_labels_rejected() {
        let d = ramp(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_sparse_labels(&d, LabelCount::Count(10), LabelMode::Uniform, &mut rng).is_err());
    }

    #[test]
    fn labels_distinct_and_deterministic() {
        let d = ramp(16, 12);
        let a = sample_sparse_labels(&d, LabelCount::Count(64), LabelMode::Uniform, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_sparse_labels(&d, LabelCount::Count(64), LabelMode::Uniform, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let mut idx = a.indices();
        idx.dedup();
        assert_eq!(idx.len(), 64);
    }

    #[test]
    fn uniform_draws_pass_chi_square() {
        // 1000 draws of 64 pixels from a 16x12 grid: every pixel's count should
        // be consistent with uniform selection. Critical value of chi-square
        // with 191 degrees of freedom at the 1% level is 239.39.
        let d = ramp(16, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = vec![0usize; 192];
        for _ in 0..1000 {
            let l = sample_sparse_labels(&d, LabelCount::Count(64), LabelMode::Uniform, &mut rng).unwrap();
            for i in l.indices() {
                counts[i] += 1;
            }
        }
        let expected = 1000.0 * 64.0 / 192.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 239.39, "chi2 = {chi2}");
    }

    #[test]
    fn label_count_parses_and_serializes() {
        assert_eq!("dense".parse::<LabelCount>().unwrap(), LabelCount::Dense);
        assert_eq!("16".parse::<LabelCount>().unwrap(), LabelCount::Count(16));
        assert_eq!(serde_json::to_string(&LabelCount::Count(4)).unwrap(), "4");
        let back: LabelCount = serde_json::from_str("\"dense\"").unwrap();
        assert_eq!(back, LabelCount::Dense);
    }
}
