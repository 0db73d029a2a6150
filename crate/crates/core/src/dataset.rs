//! On-disk sample sets: a manifest, one JSON record per sample and one
//! single-channel PFM per raster channel.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::{Error, Result};
use crate::pfm::{read_pfm, write_pfm};
use crate::raster::Raster;
use crate::scene::{DataConfig, RenderedPair, Sample, SparseLabelSet};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub data: DataConfig,
    /// Stream seed the samples were generated from.
    pub seed: u64,
    /// Sample record files, relative to the manifest.
    pub samples: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    index: usize,
    width: usize,
    height: usize,
    image_channels: usize,
    pose: PoseSE3,
    intrinsics1: CameraIntrinsics,
    intrinsics2: CameraIntrinsics,
    nominal_intrinsics: CameraIntrinsics,
    labels: SparseLabelSet,
    occlusion: Vec<bool>,
    /// Raster name → one PFM file per channel.
    rasters: Vec<(String, Vec<String>)>,
}

fn stem(index: usize) -> String {
    format!("{index:05}")
}

fn write_channels(dir: &Path, prefix: &str, name: &str, r: &Raster) -> Result<(String, Vec<String>)> {
    let mut files = Vec::with_capacity(r.channels);
    for c in 0..r.channels {
        let file = format!("{prefix}_{name}_{c}.pfm");
        let plane = Raster::new(r.width, r.height, 1, r.channel(c).to_vec())?;
        std::fs::write(dir.join(&file), write_pfm(&plane)?)?;
        files.push(file);
    }
    Ok((name.to_string(), files))
}

fn read_channels(dir: &Path, files: &[String], width: usize, height: usize) -> Result<Raster> {
    let mut data = Vec::with_capacity(files.len() * width * height);
    for f in files {
        let path = dir.join(f);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let plane = read_pfm(&std::fs::read(&path)?)?;
        if plane.channels != 1 || plane.width != width || plane.height != height {
            return Err(Error::Format(format!("{} has the wrong shape", path.display())));
        }
        data.extend(plane.data);
    }
    Raster::new(width, height, files.len(), data)
}

/// Write `sample` into `dir`; returns the record file name. Rasters are
/// stored as 32-bit floats.
pub fn save_sample(dir: &Path, sample: &Sample) -> Result<String> {
    std::fs::create_dir_all(dir)?;
    let prefix = stem(sample.index);
    let p = &sample.pair;
    let error = Raster::new(p.width(), p.height(), 1, sample.flow_error.clone())?;
    let rasters = [
        ("image1", &p.image1),
        ("image2", &p.image2),
        ("depth1", &p.depth1),
        ("flow", &p.flow),
        ("flow_input", &sample.flow_input),
        ("flow_error", &error),
    ]
    .into_iter()
    .map(|(name, r)| write_channels(dir, &prefix, name, r))
    .collect::<Result<Vec<_>>>()?;
    let record = SampleRecord {
        index: sample.index,
        width: p.width(),
        height: p.height(),
        image_channels: p.image1.channels,
        pose: p.pose,
        intrinsics1: p.intrinsics1,
        intrinsics2: p.intrinsics2,
        nominal_intrinsics: sample.nominal_intrinsics,
        labels: sample.labels.clone(),
        occlusion: p.occlusion.clone(),
        rasters,
    };
    let file = format!("{prefix}.json");
    std::fs::write(dir.join(&file), serde_json::to_string_pretty(&record)?)?;
    Ok(file)
}

/// Read a sample record written by [`save_sample`].
pub fn load_sample(path: &Path) -> Result<Sample> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let record: SampleRecord = serde_json::from_slice(&std::fs::read(path)?)?;
    let (w, h) = (record.width, record.height);
    let get = |name: &str| -> Result<Raster> {
        let files = record
            .rasters
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| f)
            .ok_or_else(|| Error::Format(format!("{} lacks raster `{name}`", path.display())))?;
        read_channels(dir, files, w, h)
    };
    let pair = RenderedPair {
        image1: get("image1")?,
        image2: get("image2")?,
        depth1: get("depth1")?,
        flow: get("flow")?,
        occlusion: record.occlusion,
        intrinsics1: record.intrinsics1,
        intrinsics2: record.intrinsics2,
        pose: record.pose,
    };
    if pair.image1.channels != record.image_channels || pair.flow.channels != 2 || pair.occlusion.len() != w * h {
        return Err(Error::Format(format!("{} is inconsistent", path.display())));
    }
    Ok(Sample {
        index: record.index,
        pair,
        labels: record.labels,
        nominal_intrinsics: record.nominal_intrinsics,
        flow_input: get("flow_input")?,
        flow_error: get("flow_error")?.data,
    })
}

pub fn save_dataset(dir: &Path, data: &DataConfig, seed: u64, samples: &[Sample]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let files = samples.iter().map(|s| save_sample(dir, s)).collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        data: data.clone(),
        seed,
        samples: files,
    };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<Sample>)> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(&path)?)?;
    let samples = manifest.samples.iter().map(|f| load_sample(&dir.join(f))).collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::generate_sample;

    #[test]
    fn dataset_round_trip_up_to_f32() {
        let data = DataConfig {
            width: 16,
            height: 16,
            ..DataConfig::default()
        };
        let samples: Vec<Sample> = (0..2).map(|i| generate_sample(&data, 3, i).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data, 3, &samples).unwrap();
        let (m, back) = load_dataset(dir.path()).unwrap();
        assert_eq!((m.seed, m.samples.len()), (3, 2));
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.pair.pose, b.pair.pose);
            assert_eq!(a.pair.occlusion, b.pair.occlusion);
            let close = |x: &Raster, y: &Raster| x.data.iter().zip(&y.data).all(|(p, q)| (p - q).abs() <= 1e-6 * p.abs().max(1.0));
            assert!(close(&a.pair.depth1, &b.pair.depth1));
            assert!(close(&a.pair.flow, &b.pair.flow));
            assert!(close(&a.flow_input, &b.flow_input));
            assert_eq!(a.pair.image1.channels, b.pair.image1.channels);
        }
        // saving what was loaded reproduces the files byte for byte
        let again = tempfile::tempdir().unwrap();
        save_dataset(again.path(), &data, 3, &back).unwrap();
        for f in std::fs::read_dir(dir.path()).unwrap() {
            let name = f.unwrap().file_name();
            assert_eq!(std::fs::read(dir.path().join(&name)).unwrap(), std::fs::read(again.path().join(&name)).unwrap());
        }
    }

    #[test]
    fn missing_dataset_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(_))));
    }
}
