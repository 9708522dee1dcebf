//! Per-vertex feature files, descriptor stacking and the semantic-distance
//! feature score.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geodesics::SemanticGroups;
use crate::spectral::{FeatureField, FeatureSemantic};

pub const DEFAULT_LOSS_PAIRS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    ExternalFile,
    Hks,
    Wks,
    Posenc,
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub field: FeatureField,
    pub source: FeatureSource,
}

impl FeatureBundle {
    pub fn new(field: FeatureField, source: FeatureSource) -> Self {
        Self { field, source }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        self.field.values()
    }

    pub fn n(&self) -> usize {
        self.field.n()
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }
}

const DMF_MAGIC: &[u8; 4] = b"DMF1";

/// Reads a `DMF1` binary matrix, or a whitespace-separated text matrix whose
/// first line is `# n d`.
pub fn load_features(path: impl AsRef<Path>, expected_n: usize) -> Result<FeatureBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (n, d, data) = if bytes.starts_with(DMF_MAGIC) {
        parse_binary(path, &bytes)?
    } else {
        parse_text(path, &bytes)?
    };
    if n != expected_n {
        return Err(Error::Shape {
            what: format!("{}: feature rows", path.display()),
            expected: expected_n,
            found: n,
        });
    }
    let values = DMatrix::from_row_slice(n, d, &data);
    let field = FeatureField::new(values, FeatureSemantic::External)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(FeatureBundle::new(field, FeatureSource::ExternalFile))
}

fn parse_binary(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 12 {
        return Err(Error::format(path, format!("byte offset {}", bytes.len()), "truncated DMF1 header"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 4 * n * d;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("byte offset {}", bytes.len().min(expected)),
            format!("expected {expected} bytes for {n} x {d}, found {}", bytes.len()),
        ));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((n, d, data))
}

fn parse_text(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::format(path, format!("byte offset {}", e.valid_up_to()), "not DMF1 and not UTF-8 text"))?;
    let mut lines = text.lines().enumerate();
    let (n, d) = loop {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| Error::format(path, "line 1", "missing '# n d' header"))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let dims: Vec<&str> = line
            .strip_prefix('#')
            .ok_or_else(|| Error::format(path, format!("line {}", ln + 1), "expected '# n d' header"))?
            .split_whitespace()
            .collect();
        let parse = |s: Option<&&str>| s.and_then(|s| s.parse::<usize>().ok());
        match (parse(dims.first()), parse(dims.get(1))) {
            (Some(n), Some(d)) if dims.len() == 2 => break (n, d),
            _ => return Err(Error::format(path, format!("line {}", ln + 1), "expected '# n d' header")),
        }
    };
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (ln, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let x = tok.parse::<f64>().map_err(|_| {
                Error::format(path, format!("line {}", ln + 1), format!("invalid number {tok:?}"))
            })?;
            data.push(x);
        }
        if data.len() - before != d {
            return Err(Error::format(
                path,
                format!("line {}", ln + 1),
                format!("expected {d} values, found {}", data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::format(path, "end of file", format!("header declares {n} rows, found {rows}")));
    }
    Ok((n, d, data))
}

/// Writes `DMF1` with an f32 payload.
pub fn write_features(path: impl AsRef<Path>, values: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let (n, d) = values.shape();
    let dim = |x: usize| u32::try_from(x).map_err(|_| Error::Argument(format!("dimension {x} exceeds u32")));
    let mut out = Vec::with_capacity(12 + 4 * n * d);
    out.extend_from_slice(DMF_MAGIC);
    out.extend_from_slice(&dim(n)?.to_le_bytes());
    out.extend_from_slice(&dim(d)?.to_le_bytes());
    for i in 0..n {
        for j in 0..d {
            out.extend_from_slice(&(values[(i, j)] as f32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Scales each nonzero row to unit L2 norm; zero rows stay zero.
pub fn unit_normalize(bundle: FeatureBundle) -> FeatureBundle {
    let semantic = bundle.field.semantic();
    let mut values = bundle.field.into_values();
    for mut row in values.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    let field = FeatureField::new(values, semantic)
        .and_then(FeatureField::into_unit_normalized)
        .expect("normalized rows of finite data are finite and unit length");
    FeatureBundle::new(field, bundle.source)
}

/// Horizontal concatenation.
pub fn concat_features(bundles: &[FeatureBundle]) -> Result<FeatureBundle> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::Argument("nothing to concatenate".into()))?;
    if bundles.len() == 1 {
        return Ok(first.clone());
    }
    let n = first.n();
    if let Some(bad) = bundles.iter().find(|b| b.n() != n) {
        return Err(Error::Shape {
            what: "feature rows in concatenation".into(),
            expected: n,
            found: bad.n(),
        });
    }
    let d: usize = bundles.iter().map(FeatureBundle::dim).sum();
    let mut values = DMatrix::zeros(n, d);
    let mut col = 0;
    for b in bundles {
        values.columns_mut(col, b.dim()).copy_from(b.values());
        col += b.dim();
    }
    let semantic = if bundles.iter().all(|b| b.field.semantic() == first.field.semantic()) {
        first.field.semantic()
    } else {
        FeatureSemantic::Descriptor
    };
    Ok(FeatureBundle::new(FeatureField::new(values, semantic)?, FeatureSource::Concat))
}

/// Negative cosine similarity between per-pair feature distances and
/// semantic distances.
pub fn semantic_loss(feat_pairs: &[(&[f64], &[f64])], dist_pairs: &[f64]) -> Result<f64> {
    let feature_dists: Vec<f64> = feat_pairs
        .iter()
        .map(|(a, b)| {
            if a.len() != b.len() {
                return Err(Error::Argument("feature rows of a pair differ in length".into()));
            }
            Ok(a.iter().zip(*b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        })
        .collect::<Result<_>>()?;
    negative_cosine(&feature_dists, dist_pairs)
}

fn negative_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "{} feature pairs but {} semantic distances",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Argument("semantic loss needs at least two pairs".into()));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric(
            "semantic loss is undefined for an all-zero distance vector".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((-dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Scores a feature matrix against ground-truth groups: samples `num_pairs`
/// vertex pairs uniformly (seeded) and returns the semantic loss. `table`
/// holds semantic distances indexed like `groups.ids()`.
pub fn score_features(
    features: &DMatrix<f64>,
    groups: &SemanticGroups,
    table: &DMatrix<f64>,
    num_pairs: usize,
    seed: u64,
) -> Result<f64> {
    let n = groups.n();
    if features.nrows() != n {
        return Err(Error::Shape {
            what: "feature rows vs groups".into(),
            expected: n,
            found: features.nrows(),
        });
    }
    let g = groups.num_groups();
    if table.shape() != (g, g) {
        return Err(Error::Argument(format!(
            "semantic table is {}x{}, expected {g}x{g}",
            table.nrows(),
            table.ncols()
        )));
    }
    let slot: Vec<usize> = groups
        .group_of()
        .iter()
        .map(|id| groups.ids().binary_search(id).expect("label of an existing group"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fd = Vec::with_capacity(num_pairs);
    let mut sd = Vec::with_capacity(num_pairs);
    for _ in 0..num_pairs {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        fd.push((features.row(i) - features.row(j)).norm());
        sd.push(table[(slot[i], slot[j])]);
    }
    negative_cosine(&fd, &sd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(values: DMatrix<f64>) -> FeatureBundle {
        FeatureBundle::new(
            FeatureField::new(values, FeatureSemantic::External).unwrap(),
            FeatureSource::ExternalFile,
        )
    }

    #[test]
    fn dmf_small_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.dmf");
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        write_features(&p, &m).unwrap();
        let back = load_features(&p, 3).unwrap();
        assert_eq!(back.values(), &m);
        assert!(matches!(load_features(&p, 4), Err(Error::Shape { .. })));
    }

    #[test]
    fn dmf_payload_is_bitwise_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.dmf");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = DMatrix::from_fn(100, 768, |_, _| rng.random_range(-3.0f32..3.0) as f64);
        write_features(&p, &m).unwrap();
        let first = fs::read(&p).unwrap();
        let back = load_features(&p, 100).unwrap();
        write_features(&p, back.values()).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);
        assert_eq!(back.values(), &m);
    }

    #[test]
    fn text_format_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        fs::write(&p, "# 2 3\n1 2 3\n4 5 6\n").unwrap();
        let f = load_features(&p, 2).unwrap();
        assert_eq!(f.values()[(1, 2)], 6.0);
        fs::write(&p, "# 2 3\n1 2 3\n4 x 6\n").unwrap();
        assert!(load_features(&p, 2).unwrap_err().to_string().contains("line 3"));
        fs::write(&p, "# 1 2\n1 nan\n").unwrap();
        assert!(matches!(load_features(&p, 1), Err(Error::Data(_))));
    }

    #[test]
    fn normalization_examples() {
        let b = unit_normalize(bundle(DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 0.0])));
        assert!((b.values()[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((b.values()[(0, 1)] - 0.8).abs() < 1e-15);
        assert_eq!(b.values().row(1).norm(), 0.0);
        assert!(b.field.is_unit_normalized());
        let again = unit_normalize(b.clone());
        assert!((again.values() - b.values()).abs().max() <= 1e-12);
    }

    #[test]
    fn concatenation() {
        let a = bundle(DMatrix::from_element(4, 2, 1.0));
        let b = bundle(DMatrix::from_element(4, 3, 2.0));
        let c = concat_features(&[a.clone(), b]).unwrap();
        assert_eq!(c.dim(), 5);
        assert_eq!(c.source, FeatureSource::Concat);
        assert_eq!(c.values()[(0, 4)], 2.0);
        assert_eq!(concat_features(&[a.clone()]).unwrap(), a);
        let short = bundle(DMatrix::from_element(3, 1, 0.0));
        assert!(matches!(concat_features(&[a, short]), Err(Error::Shape { .. })));
    }

    #[test]
    fn loss_examples() {
        let rows: Vec<[f64; 1]> = vec![[0.0], [2.0], [5.0], [6.0]];
        let pairs = [(&rows[0][..], &rows[1][..]), (&rows[2][..], &rows[3][..])];
        // feature distances (2, 1) = 2 x semantic (1, 0.5)
        assert!((semantic_loss(&pairs, &[1.0, 0.5]).unwrap() + 1.0).abs() < 1e-15);
        let ortho = negative_cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(ortho, 0.0);
        assert!(semantic_loss(&pairs, &[0.0, 0.0]).is_err());
        assert!(semantic_loss(&pairs[..1], &[1.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::collection::vec;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn unit_normalize_keeps_row_directions(rows in vec(vec(-10.0f64..10.0, 4), 1..20), zero in 0usize..20) {
                let n = rows.len();
                let mut m = DMatrix::from_fn(n, 4, |i, j| rows[i][j]);
                if zero < n {
                    m.row_mut(zero).fill(0.0);
                }
                let out = unit_normalize(bundle(m.clone()));
                for i in 0..n {
                    let norm = m.row(i).norm();
                    let r = out.values().row(i);
                    if norm == 0.0 {
                        prop_assert_eq!(r.amax(), 0.0);
                    } else {
                        prop_assert!((r.norm() - 1.0).abs() < 1e-12);
                        prop_assert!((r * norm - m.row(i)).amax() <= 1e-12 * norm);
                    }
                }
                let twice = unit_normalize(out.clone());
                prop_assert!((twice.values() - out.values()).amax() <= 1e-12);
            }

            #[test]
            fn semantic_loss_ignores_scale_and_pair_order(
                pairs in vec((vec(-5.0f64..5.0, 3), vec(-5.0f64..5.0, 3), 0.01f64..10.0), 2..30),
                s in 0.01f64..100.0,
                t in 0.01f64..100.0,
                seed in any::<u64>(),
            ) {
                let loss = |pairs: &[(Vec<f64>, Vec<f64>, f64)], s: f64, t: f64| {
                    let scaled: Vec<(Vec<f64>, Vec<f64>)> = pairs
                        .iter()
                        .map(|(a, b, _)| (a.iter().map(|x| s * x).collect(), b.iter().map(|x| s * x).collect()))
                        .collect();
                    let refs: Vec<(&[f64], &[f64])> = scaled.iter().map(|(a, b)| (a.as_slice(), b.as_slice())).collect();
                    let d: Vec<f64> = pairs.iter().map(|p| t * p.2).collect();
                    semantic_loss(&refs, &d)
                };
                let base = loss(&pairs, 1.0, 1.0);
                prop_assume!(base.is_ok());
                let base = base.unwrap();
                prop_assert!((-1.0 - 1e-12..=1e-12).contains(&base));
                prop_assert!((loss(&pairs, s, t).unwrap() - base).abs() <= 1e-12);
                let mut shuffled = pairs.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for i in (1..shuffled.len()).rev() {
                    shuffled.swap(i, rng.random_range(0..=i));
                }
                prop_assert!((loss(&shuffled, 1.0, 1.0).unwrap() - base).abs() <= 1e-12);
            }
        }
    }
}
