//! Binarized statistical image features.
//!
//! Each filter of a bank is cross-correlated with the image (replicate
//! padding at the borders); the sign of filter `i`'s response sets bit `i`
//! of the pixel's code (`response > 0` gives 1). Codes are pooled into a
//! normalized histogram over a region, and histograms of several banks are
//! concatenated into one feature vector.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::{Mask, NirImage};

/// Largest supported number of filters per bank.
pub const MAX_FILTERS: usize = 12;

/// Square filters of one odd size.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    name: String,
    size: usize,
    kernels: Vec<Vec<f64>>,
}

impl FilterBank {
    pub fn new(name: impl Into<String>, size: usize, kernels: Vec<Vec<f64>>) -> Result<Self> {
        if size % 2 != 1 {
            return Err(Error::InvalidInput(format!(
                "filter size {size} must be odd"
            )));
        }
        if kernels.is_empty() || kernels.len() > MAX_FILTERS {
            return Err(Error::InvalidInput(format!(
                "a bank holds 1..={MAX_FILTERS} filters, got {}",
                kernels.len()
            )));
        }
        for (i, k) in kernels.iter().enumerate() {
            if k.len() != size * size {
                return Err(Error::InvalidInput(format!(
                    "filter {i} has {} values, expected {}",
                    k.len(),
                    size * size
                )));
            }
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "filter {i} has a non-finite value"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            size,
            kernels,
        })
    }

    /// Seeded stand-in bank: Gaussian noise under a Gaussian envelope, made
    /// zero-mean and scaled to unit L2 norm.
    pub fn random_zero_mean(
        name: impl Into<String>,
        size: usize,
        count: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = (size / 2) as f64;
        let sigma = (half / 2.0).max(0.5);
        let kernels = (0..count)
            .map(|_| {
                let mut k: Vec<f64> = (0..size * size)
                    .map(|i| {
                        let (u, v) = ((i % size) as f64 - half, (i / size) as f64 - half);
                        let env = (-(u * u + v * v) / (2.0 * sigma * sigma)).exp();
                        env * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                    })
                    .collect();
                let mean = k.iter().sum::<f64>() / k.len() as f64;
                k.iter_mut().for_each(|v| *v -= mean);
                let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
                k.iter_mut().for_each(|v| *v /= norm);
                k
            })
            .collect();
        Self::new(name, size, kernels)
    }

    /// Three 8-filter stand-in banks of sizes 7, 9 and 11.
    pub fn default_multiscale() -> Vec<FilterBank> {
        [7usize, 9, 11]
            .into_iter()
            .map(|s| {
                Self::random_zero_mean(format!("bsif_{s}x{s}_8"), s, 8, 0xB51F_0000 + s as u64)
                    .expect("stand-in parameters are valid")
            })
            .collect()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of filters, i.e. bits per code.
    pub fn bits(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernels(&self) -> &[Vec<f64>] {
        &self.kernels
    }

    pub fn histogram_len(&self) -> usize {
        1 << self.bits()
    }

    /// File format: `s n`, then `n` blocks of `s` lines with `s` values each.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.size, self.bits());
        for k in &self.kernels {
            for row in k.chunks(self.size) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(name: impl Into<String>, text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty filter bank file"))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(origin, 1, "header must be `size count`"))?;
        let [size, count] = head[..] else {
            return Err(Error::parse(origin, 1, "header must be `size count`"));
        };
        if size % 2 != 1 {
            return Err(Error::parse(
                origin,
                1,
                format!("filter size {size} must be odd"),
            ));
        }
        if count == 0 || count > MAX_FILTERS {
            return Err(Error::parse(
                origin,
                1,
                format!("filter count {count} outside 1..={MAX_FILTERS}"),
            ));
        }

        let mut values = Vec::with_capacity(size * size * count);
        let mut last_line = 1;
        for (i, line) in lines {
            last_line = i + 1;
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(origin, i + 1, format!("bad value `{tok}`")))?;
                values.push(v);
            }
        }
        if values.len() != size * size * count {
            return Err(Error::parse(
                origin,
                last_line,
                format!(
                    "header declares {count} filters of {size}x{size} ({} values), found {}",
                    size * size * count,
                    values.len()
                ),
            ));
        }
        let kernels = values.chunks(size * size).map(<[f64]>::to_vec).collect();
        Self::new(name, size, kernels).map_err(|e| Error::parse(origin, 1, e.to_string()))
    }
}

/// Loads a bank file; the bank is named after the file stem.
pub fn load_filter_bank(path: impl AsRef<Path>) -> Result<FilterBank> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "bank".into());
    FilterBank::parse(name, &text, path)
}

/// Per-pixel binary codes from one bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeImage {
    pub width: usize,
    pub height: usize,
    pub bits: usize,
    pub codes: Vec<u32>,
}

impl CodeImage {
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.codes[y * self.width + x]
    }
}

pub fn bsif_code(image: &NirImage, bank: &FilterBank) -> Result<CodeImage> {
    let (w, h) = image.dims();
    let s = bank.size();
    if w < s || h < s {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} is smaller than the {s}x{s} filters of `{}`",
            bank.name()
        )));
    }
    let half = s / 2;
    let pw = w + 2 * half;
    let ph = h + 2 * half;
    let src = image.as_slice();
    let mut padded = Vec::with_capacity(pw * ph);
    for py in 0..ph {
        let y = py.saturating_sub(half).min(h - 1);
        for px in 0..pw {
            let x = px.saturating_sub(half).min(w - 1);
            padded.push(src[y * w + x]);
        }
    }

    let mut codes = vec![0u32; w * h];
    for (bit, kernel) in bank.kernels().iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let mut r = 0.0;
                for v in 0..s {
                    let row = &padded[(y + v) * pw + x..(y + v) * pw + x + s];
                    let krow = &kernel[v * s..(v + 1) * s];
                    for u in 0..s {
                        r += krow[u] * row[u];
                    }
                }
                if r > 0.0 {
                    codes[y * w + x] |= 1 << bit;
                }
            }
        }
    }
    Ok(CodeImage {
        width: w,
        height: h,
        bits: bank.bits(),
        codes,
    })
}

/// Normalized histogram of the codes under `region`; length `2^bits`.
pub fn bsif_histogram(codes: &CodeImage, region: &Mask) -> Result<Vec<f64>> {
    if region.dims() != (codes.width, codes.height) {
        return Err(Error::dims((codes.width, codes.height), region.dims()));
    }
    let mut counts = vec![0usize; 1 << codes.bits];
    let mut total = 0usize;
    for (&c, &inside) in codes.codes.iter().zip(region.as_slice()) {
        if inside {
            counts[c as usize] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Degenerate("histogram region is empty".into()));
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / total as f64)
        .collect())
}

/// Concatenated per-bank histograms with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: Vec<(String, usize)>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The histogram block produced by bank `name`.
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        let mut offset = 0;
        for (bank, len) in &self.layout {
            if bank == name {
                return Some(&self.values[offset..offset + len]);
            }
            offset += len;
        }
        None
    }
}

pub fn extract_features(
    image: &NirImage,
    region: &Mask,
    banks: &[FilterBank],
) -> Result<FeatureVector> {
    if banks.is_empty() {
        return Err(Error::InvalidInput(
            "at least one filter bank is required".into(),
        ));
    }
    let mut names = HashSet::new();
    if let Some(dup) = banks.iter().find(|b| !names.insert(b.name())) {
        return Err(Error::InvalidInput(format!(
            "duplicate bank name `{}`",
            dup.name()
        )));
    }
    let mut values = Vec::with_capacity(banks.iter().map(FilterBank::histogram_len).sum());
    let mut layout = Vec::with_capacity(banks.len());
    for bank in banks {
        let hist = bsif_histogram(&bsif_code(image, bank)?, region)?;
        layout.push((bank.name().to_string(), hist.len()));
        values.extend(hist);
    }
    Ok(FeatureVector { values, layout })
}

/// Feature CSV: `sample_id,side,v1,...,vD`, one row per image.
pub fn features_to_csv(rows: &[(String, &str, &FeatureVector)]) -> String {
    let dim = rows.first().map_or(0, |r| r.2.len());
    let mut out = String::from("sample_id,side");
    for i in 1..=dim {
        let _ = write!(out, ",v{i}");
    }
    out.push('\n');
    for (id, side, fv) in rows {
        let _ = write!(out, "{id},{side}");
        for v in &fv.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(name: &str, size: usize, kernels: Vec<Vec<f64>>) -> FilterBank {
        FilterBank::new(name, size, kernels).unwrap()
    }

    #[test]
    fn parses_small_bank() {
        let text = "3 2\n1 0 -1\n2 0 -2\n1 0 -1\n\n1 2 1\n0 0 0\n-1 -2 -1\n";
        let b = FilterBank::parse("sobel", text, Path::new("mem")).unwrap();
        assert_eq!((b.size(), b.bits()), (3, 2));
        assert_eq!(
            b.kernels()[1],
            vec![1.0, 2.0, 1.0, 0.0, 0.0, 0.0, -1.0, -2.0, -1.0]
        );
    }

    #[test]
    fn rejects_malformed_banks() {
        let seven_of_eight = format!("1 8\n{}", "0.5\n".repeat(7));
        assert!(FilterBank::parse("b", &seven_of_eight, Path::new("mem")).is_err());
        assert!(FilterBank::parse("b", "2 1\n1 2\n3 4\n", Path::new("mem")).is_err());
        assert!(FilterBank::parse("b", "3\n", Path::new("mem")).is_err());
        assert!(FilterBank::parse("b", "1 1\nx\n", Path::new("mem")).is_err());
        assert!(FilterBank::parse("b", "", Path::new("mem")).is_err());
    }

    #[test]
    fn bank_file_round_trip_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let b = FilterBank::random_zero_mean("r", 5, 6, 99).unwrap();
        let p = tmp.path().join("r.txt");
        b.save(&p).unwrap();
        let back = load_filter_bank(&p).unwrap();
        assert_eq!(back, b);
        let p2 = tmp.path().join("r2.txt");
        back.save(&p2).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn stand_in_banks_are_zero_mean_and_unit_norm() {
        for b in FilterBank::default_multiscale() {
            assert_eq!(b.bits(), 8);
            for k in b.kernels() {
                assert!(k.iter().sum::<f64>().abs() < 1e-12);
                assert!((k.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_with_zero_sum_kernel_gives_zero_bits() {
        let img = NirImage::filled(5, 5, 0.7).unwrap();
        let b = bank(
            "z",
            3,
            vec![
                vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0],
                vec![1.0; 9],
            ],
        );
        let codes = bsif_code(&img, &b).unwrap();
        // kernel 0 sums to 0 (bit 0 off), kernel 1 sums to 9 (bit 1 on)
        assert!(codes.codes.iter().all(|&c| c == 0b10));
    }

    #[test]
    fn identity_kernel_thresholds_pixels() {
        let img = NirImage::from_fn(4, 3, |x, y| ((x + y) % 2) as f64).unwrap();
        let codes = bsif_code(&img, &bank("id", 1, vec![vec![1.0]])).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(codes.get(x, y), u32::from(img.get(x, y) > 0.0));
            }
        }
    }

    #[test]
    fn image_smaller_than_kernel_is_rejected() {
        let img = NirImage::filled(2, 5, 0.1).unwrap();
        assert!(bsif_code(&img, &bank("b", 3, vec![vec![0.0; 9]])).is_err());
    }

    #[test]
    fn histogram_examples() {
        let zero = CodeImage {
            width: 2,
            height: 2,
            bits: 2,
            codes: vec![0; 4],
        };
        let all = Mask::filled(2, 2, true).unwrap();
        assert_eq!(
            bsif_histogram(&zero, &all).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0]
        );

        let uniform = CodeImage {
            width: 2,
            height: 2,
            bits: 2,
            codes: vec![0, 1, 2, 3],
        };
        assert_eq!(bsif_histogram(&uniform, &all).unwrap(), vec![0.25; 4]);

        let none = Mask::filled(2, 2, false).unwrap();
        assert!(bsif_histogram(&zero, &none).is_err());
        assert!(bsif_histogram(&zero, &Mask::filled(3, 2, true).unwrap()).is_err());
    }

    #[test]
    fn histogram_matches_counting_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let codes: Vec<u32> = (0..20 * 15).map(|_| rng.gen_range(0..8)).collect();
        let region = Mask::from_fn(20, 15, |x, y| (x * 7 + y * 3) % 5 != 0).unwrap();
        let ci = CodeImage {
            width: 20,
            height: 15,
            bits: 3,
            codes: codes.clone(),
        };
        let hist = bsif_histogram(&ci, &region).unwrap();
        let inside: Vec<u32> = codes
            .iter()
            .zip(region.as_slice())
            .filter(|(_, &m)| m)
            .map(|(&c, _)| c)
            .collect();
        for (bin, &h) in hist.iter().enumerate() {
            let count = inside.iter().filter(|&&c| c == bin as u32).count();
            assert_eq!(h, count as f64 / inside.len() as f64);
        }
    }

    #[test]
    fn feature_layout_and_block_permutation() {
        let img = NirImage::from_fn(12, 12, |x, y| ((x * 13 + y * 7) % 11) as f64 / 10.0).unwrap();
        let region = Mask::filled(12, 12, true).unwrap();
        let b1 = FilterBank::random_zero_mean("b1", 3, 3, 1).unwrap();
        let b2 = FilterBank::random_zero_mean("b2", 5, 2, 2).unwrap();

        let single = extract_features(&img, &region, std::slice::from_ref(&b2)).unwrap();
        assert_eq!(single.len(), 4);

        let fwd = extract_features(&img, &region, &[b1.clone(), b2.clone()]).unwrap();
        assert_eq!(fwd.len(), 12);
        assert_eq!(
            fwd.layout,
            vec![("b1".to_string(), 8), ("b2".to_string(), 4)]
        );

        let rev = extract_features(&img, &region, &[b2, b1]).unwrap();
        assert_eq!(&rev.values[..4], &fwd.values[8..]);
        assert_eq!(&rev.values[4..], &fwd.values[..8]);
        assert_eq!(rev.block("b1"), fwd.block("b1"));

        assert!(extract_features(&img, &region, &[]).is_err());
    }

    #[test]
    fn feature_csv_layout() {
        let fv = FeatureVector {
            values: vec![0.25, 0.75],
            layout: vec![("b".into(), 2)],
        };
        let csv = features_to_csv(&[("s1".into(), "left", &fv)]);
        assert_eq!(csv, "sample_id,side,v1,v2\ns1,left,0.25,0.75\n");
    }
}
