//! Datasets: IDX ingestion, synthetic Gaussian blobs, and the label-Dirichlet
//! split across clients.

use std::io::Read;
use std::path::Path;

use flate2::read::MultiGzDecoder;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::seed::{self, tag};
use crate::{Error, Result};

pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// Feature matrix (one sample per row) with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// First `n` samples (or all of them when `n` exceeds the length).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Decoded content of one IDX stream.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    Labels(Vec<u8>),
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        /// Row-major pixels scaled to `[0, 1]`.
        pixels: Vec<f64>,
    },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn read_u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::Parse {
            offset: self.pos,
            message: "truncated header".into(),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }
}

fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Parse {
                offset: 0,
                message: format!("gzip: {e}"),
            })?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

/// Parses an unsigned-byte IDX stream (labels `0x801` or images `0x803`).
/// Gzip-compressed input is detected by its magic and inflated first.
pub fn load_idx(bytes: &[u8]) -> Result<IdxData> {
    let raw = maybe_gunzip(bytes)?;
    let mut cur = Cursor { bytes: &raw, pos: 0 };
    let magic = cur.read_u32()?;
    let dims = match magic {
        IDX_LABELS_MAGIC => 1,
        IDX_IMAGES_MAGIC => 3,
        other => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("unsupported IDX magic {other:#010x}"),
            })
        }
    };
    let sizes = (0..dims)
        .map(|_| cur.read_u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let expected = sizes
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .ok_or_else(|| Error::Parse {
            offset: 4,
            message: "dimension product overflows".into(),
        })?;
    let payload = &raw[cur.pos..];
    if payload.len() != expected {
        return Err(Error::Parse {
            offset: cur.pos + payload.len().min(expected),
            message: format!("payload has {} bytes, header declares {expected}", payload.len()),
        });
    }
    Ok(match dims {
        1 => IdxData::Labels(payload.to_vec()),
        _ => IdxData::Images {
            count: sizes[0],
            rows: sizes[1],
            cols: sizes[2],
            pixels: payload.iter().map(|&b| f64::from(b) / 255.0).collect(),
        },
    })
}

/// Pairs an image stream with a label stream.
pub fn idx_dataset(images: &[u8], labels: &[u8], num_classes: usize) -> Result<Dataset> {
    let (count, rows, cols, pixels) = match load_idx(images)? {
        IdxData::Images {
            count,
            rows,
            cols,
            pixels,
        } => (count, rows, cols, pixels),
        IdxData::Labels(_) => return Err(Error::invalid("expected an image file, got labels")),
    };
    let labels = match load_idx(labels)? {
        IdxData::Labels(l) => l,
        IdxData::Images { .. } => return Err(Error::invalid("expected a label file, got images")),
    };
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    Dataset::new(
        DMatrix::from_row_slice(count, rows * cols, &pixels),
        labels,
        num_classes,
    )
}

fn read_first(dir: &Path, names: &[&str]) -> Result<Vec<u8>> {
    for name in names {
        let path = dir.join(name);
        if path.exists() {
            return std::fs::read(&path).map_err(|e| Error::io(path, e));
        }
    }
    Err(Error::io(
        dir.join(names[0]),
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found"),
    ))
}

/// Loads the standard MNIST file quartet from `dir` (plain or `.gz`).
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let load = |img: &str, lbl: &str| -> Result<Dataset> {
        let images = read_first(dir, &[img, &format!("{img}.gz")])?;
        let labels = read_first(dir, &[lbl, &format!("{lbl}.gz")])?;
        idx_dataset(&images, &labels, 10)
    };
    Ok((
        load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    ))
}

/// Class-conditional unit-variance Gaussian blobs.
///
/// With `classes <= dim` the class means are `separation / sqrt(2) * e_k`, so
/// every pair of means is exactly `separation` apart; otherwise means are laid
/// on the first axis at spacing `separation`. Labels cycle through the classes
/// before a seeded shuffle, so class sizes differ by at most one.
pub fn synthetic_dataset(classes: usize, dim: usize, n: usize, separation: f64, seed: u64) -> Dataset {
    let classes = classes.max(1);
    let dim = dim.max(1);
    let mut rng = seed::stream(seed, &[tag::SYNTHETIC]);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let scale = separation / std::f64::consts::SQRT_2;
    let mut features = DMatrix::zeros(n, dim);
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features[(i, j)] = noise;
        }
        if classes <= dim {
            features[(i, y)] += scale;
        } else {
            features[(i, 0)] += separation * y as f64;
        }
    }
    Dataset {
        features,
        labels,
        num_classes: classes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    /// Dirichlet concentration; smaller is more heterogeneous.
    pub alpha: f64,
    pub clients: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid("Dirichlet alpha must be positive and finite"));
        }
        if self.clients < 1 {
            return Err(Error::invalid("partition needs at least one client"));
        }
        Ok(())
    }
}

fn dirichlet_sample<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|g| g / total).collect()
    } else {
        // Every gamma draw underflowed: the simplex point is a vertex.
        let mut v = vec![0.0; k];
        v[rng.random_range(0..k)] = 1.0;
        v
    }
}

/// Integer counts summing to `total`, proportional to `props` by the
/// largest-remainder rule (ties to the lower index).
pub fn largest_remainder(total: usize, props: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Label-Dirichlet split: for every class draw `q ~ Dir(alpha * 1_N)` and
/// hand that class's (shuffled) indices to clients in proportion to `q`.
pub fn dirichlet_partition(labels: &[usize], spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    if labels.is_empty() {
        return Err(Error::invalid("cannot partition an empty label vector"));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut rng = seed::stream(spec.seed, &[tag::PARTITION]);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut shards = vec![Vec::new(); spec.clients];
    for mut idx in by_class {
        idx.shuffle(&mut rng);
        let q = dirichlet_sample(spec.alpha, spec.clients, &mut rng);
        let counts = largest_remainder(idx.len(), &q);
        let mut start = 0;
        for (client, &c) in counts.iter().enumerate() {
            shards[client].extend_from_slice(&idx[start..start + c]);
            start += c;
        }
    }
    for shard in &mut shards {
        shard.sort_unstable();
    }
    Ok(shards)
}

/// Per-class sample counts of one client.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassHistogram {
    pub counts: Vec<u64>,
}

impl ClassHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn class_histogram(ds: &Dataset, num_classes: usize) -> Result<ClassHistogram> {
    label_histogram(&ds.labels, num_classes)
}

pub fn label_histogram(labels: &[usize], num_classes: usize) -> Result<ClassHistogram> {
    let mut counts = vec![0u64; num_classes];
    for &y in labels {
        *counts
            .get_mut(y)
            .ok_or_else(|| Error::invalid(format!("label {y} out of range for {num_classes} classes")))? += 1;
    }
    Ok(ClassHistogram { counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn be(v: u32) -> [u8; 4] {
        v.to_be_bytes()
    }

    #[test]
    fn idx_empty_labels() {
        let bytes: Vec<u8> = [be(IDX_LABELS_MAGIC), be(0)].concat();
        assert_eq!(load_idx(&bytes).unwrap(), IdxData::Labels(vec![]));
    }

    #[test]
    fn idx_tiny_image() {
        let mut bytes: Vec<u8> = [be(IDX_IMAGES_MAGIC), be(1), be(2), be(2)].concat();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        match load_idx(&bytes).unwrap() {
            IdxData::Images {
                count,
                rows,
                cols,
                pixels,
            } => {
                assert_eq!((count, rows, cols), (1, 2, 2));
                assert_eq!(pixels, vec![0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn idx_errors() {
        let bad: Vec<u8> = [be(0x0000_0802), be(0)].concat();
        assert!(matches!(load_idx(&bad), Err(Error::Parse { offset: 0, .. })));

        let mut short: Vec<u8> = [be(IDX_LABELS_MAGIC), be(3)].concat();
        short.extend_from_slice(&[1, 2]);
        assert!(matches!(load_idx(&short), Err(Error::Parse { offset: 10, .. })));

        assert!(matches!(load_idx(&[0, 0]), Err(Error::Parse { offset: 0, .. })));

        let mut long: Vec<u8> = [be(IDX_LABELS_MAGIC), be(1)].concat();
        long.extend_from_slice(&[1, 2]);
        assert!(load_idx(&long).is_err());
    }

    #[test]
    fn idx_gzip_transparent() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let raw: Vec<u8> = [be(IDX_LABELS_MAGIC), be(3), [7, 8, 9, 0]].concat();
        let raw = &raw[..11];
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(load_idx(&gz).unwrap(), IdxData::Labels(vec![7, 8, 9]));
    }

    #[test]
    fn synthetic_examples() {
        assert!(synthetic_dataset(3, 2, 0, 1.0, 1).is_empty());
        assert_eq!(synthetic_dataset(3, 4, 50, 2.0, 5), synthetic_dataset(3, 4, 50, 2.0, 5));
        let ds = synthetic_dataset(3, 2, 31, 2.0, 5);
        let h = class_histogram(&ds, 3).unwrap();
        assert!(h.counts.iter().max().unwrap() - h.counts.iter().min().unwrap() <= 1);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn synthetic_is_centroid_separable() {
        let ds = synthetic_dataset(2, 2, 200, 10.0, 11);
        let mut centroids = [[0.0f64; 2]; 2];
        let mut sizes = [0.0f64; 2];
        for (i, &y) in ds.labels.iter().enumerate() {
            sizes[y] += 1.0;
            for j in 0..2 {
                centroids[y][j] += ds.features[(i, j)];
            }
        }
        for y in 0..2 {
            for j in 0..2 {
                centroids[y][j] /= sizes[y];
            }
        }
        let correct = ds
            .labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| {
                let d = |c: &[f64; 2]| (0..2).map(|j| (ds.features[(i, j)] - c[j]).powi(2)).sum::<f64>();
                let pred = if d(&centroids[0]) <= d(&centroids[1]) { 0 } else { 1 };
                pred == y
            })
            .count();
        assert!(correct as f64 / 200.0 > 0.99);
    }

    #[test]
    fn single_client_gets_everything() {
        let labels = vec![0, 1, 2, 1, 0];
        let spec = PartitionSpec {
            alpha: 0.5,
            clients: 1,
            seed: 3,
        };
        assert_eq!(dirichlet_partition(&labels, &spec).unwrap(), vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn large_alpha_is_near_uniform() {
        let labels: Vec<usize> = (0..4000).map(|i| i % 10).collect();
        for seed in 0..5 {
            let spec = PartitionSpec {
                alpha: 1e6,
                clients: 4,
                seed,
            };
            let shards = dirichlet_partition(&labels, &spec).unwrap();
            for shard in &shards {
                let h = label_histogram(&shard.iter().map(|&i| labels[i]).collect::<Vec<_>>(), 10).unwrap();
                for &c in &h.counts {
                    // symmetric-Dirichlet mean 1/N of 400 per class
                    assert!((c as f64 - 100.0).abs() <= 10.0, "{c}");
                }
            }
        }
    }

    #[test]
    fn small_alpha_is_concentrated() {
        let labels: Vec<usize> = (0..6000).map(|i| i % 10).collect();
        for seed in 0..5 {
            let spec = PartitionSpec {
                alpha: 0.05,
                clients: 20,
                seed,
            };
            let shards = dirichlet_partition(&labels, &spec).unwrap();
            let mut shares: Vec<f64> = shards
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| {
                    let h = label_histogram(&s.iter().map(|&i| labels[i]).collect::<Vec<_>>(), 10).unwrap();
                    *h.counts.iter().max().unwrap() as f64 / s.len() as f64
                })
                .collect();
            shares.sort_by(f64::total_cmp);
            let median = shares[shares.len() / 2];
            assert!(median > 0.6, "seed {seed}: median dominant share {median}");
        }
    }

    #[test]
    fn histogram_examples() {
        assert_eq!(label_histogram(&[], 3).unwrap().counts, vec![0, 0, 0]);
        assert_eq!(label_histogram(&[0, 0, 1], 3).unwrap().counts, vec![2, 1, 0]);
        assert!(label_histogram(&[3], 3).is_err());
    }

    #[test]
    fn largest_remainder_exact() {
        assert_eq!(largest_remainder(10, &[0.25, 0.25, 0.5]), vec![3, 2, 5]);
        assert_eq!(largest_remainder(7, &[1.0]), vec![7]);
        assert_eq!(largest_remainder(0, &[0.3, 0.7]), vec![0, 0]);
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_cover(
            labels in prop::collection::vec(0usize..6, 1..300),
            clients in 1usize..12,
            alpha in 0.01f64..100.0,
            seed in any::<u64>(),
        ) {
            let spec = PartitionSpec { alpha, clients, seed };
            let shards = dirichlet_partition(&labels, &spec).unwrap();
            prop_assert_eq!(shards.len(), clients);
            let mut all: Vec<usize> = shards.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            prop_assert_eq!(&shards, &dirichlet_partition(&labels, &spec).unwrap());

            let global = label_histogram(&labels, 6).unwrap();
            let mut agg = vec![0u64; 6];
            for s in &shards {
                let h = label_histogram(&s.iter().map(|&i| labels[i]).collect::<Vec<_>>(), 6).unwrap();
                prop_assert_eq!(h.total(), s.len() as u64);
                for (a, c) in agg.iter_mut().zip(h.counts) { *a += c; }
            }
            prop_assert_eq!(agg, global.counts);
        }
    }
}
