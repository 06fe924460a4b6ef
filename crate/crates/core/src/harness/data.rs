//! Datasets and random range queries.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::query::{Interval, RangeQuery};

use super::config::DataKind;

/// `count` records of `dims` independent draws, rounded and clipped into
/// `[0, domain)`. Laplace draws use scale `std / sqrt(2)`.
pub fn gen_synthetic<R: Rng + ?Sized>(
    kind: DataKind,
    count: usize,
    dims: usize,
    mean: f64,
    std: f64,
    domain: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if count == 0 || dims == 0 || domain == 0 {
        return Err(Error::param("synthetic data needs positive count, dims and domain"));
    }
    if !(std.is_finite() && std >= 0.0) {
        return Err(Error::param(format!("std must be non-negative, got {std}")));
    }
    if kind == DataKind::Csv {
        return Err(Error::param("csv data is loaded, not generated"));
    }
    let top = (domain - 1) as f64;
    let clip = |x: f64| x.round().clamp(0.0, top) as usize;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let b = std / 2f64.sqrt();
    let draw = |rng: &mut R| -> f64 {
        match kind {
            DataKind::Gaussian => mean + std * normal.sample(rng),
            DataKind::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                mean - b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            DataKind::Uniform => rng.random_range(0..domain) as f64,
            DataKind::Csv => unreachable!("checked by caller"),
        }
    };
    Ok((0..count).map(|_| (0..dims).map(|_| clip(draw(rng))).collect()).collect())
}

/// Rows of the named columns, each min-max rescaled onto `[0, domain)` and
/// floored. Rows with a missing or non-numeric selected value are dropped;
/// the count of dropped rows is returned alongside.
pub fn load_csv(path: &Path, columns: &[String], domain: usize) -> Result<(Vec<Vec<usize>>, usize)> {
    let data_err = |reason: String| Error::Data { path: path.to_path_buf(), reason };
    if columns.is_empty() || domain == 0 {
        return Err(Error::param("csv loading needs columns and a positive domain"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            },
            _ => data_err(e.to_string()),
        })?;
    let headers = reader.headers().map_err(|e| data_err(e.to_string()))?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h.trim() == c)
                .ok_or_else(|| data_err(format!("no column named {c:?}")))
        })
        .collect::<Result<_>>()?;
    let mut raw: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    for row in reader.records() {
        let Ok(row) = row else {
            dropped += 1;
            continue;
        };
        let vals: Option<Vec<f64>> = idx
            .iter()
            .map(|&i| row.get(i).and_then(|s| s.trim().parse::<f64>().ok()).filter(|x| x.is_finite()))
            .collect();
        match vals {
            Some(v) => raw.push(v),
            None => dropped += 1,
        }
    }
    if raw.is_empty() {
        return Err(data_err(format!("no valid rows in columns {columns:?}")));
    }
    let mut out = vec![vec![0usize; columns.len()]; raw.len()];
    for j in 0..columns.len() {
        let lo = raw.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            for (o, r) in out.iter_mut().zip(&raw) {
                let x = (r[j] - lo) / (hi - lo) * domain as f64;
                o[j] = (x.floor() as usize).min(domain - 1);
            }
        }
    }
    Ok((out, dropped))
}

/// Fraction of records satisfying every range of `q`.
pub fn true_frequency(records: &[Vec<usize>], q: &RangeQuery) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no records"));
    }
    let hits = records.iter().filter(|r| q.contains(r)).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Random queries over `dims_query` of `dims_total` attributes. Each range
/// has a uniform centre and a length uniform in
/// `[ceil(min_len c), floor(max_len c)]`, clipped to the domain.
pub fn gen_queries<R: Rng + ?Sized>(
    count: usize,
    domain: usize,
    dims_total: usize,
    dims_query: usize,
    (min_len, max_len): (f64, f64),
    rng: &mut R,
) -> Result<Vec<RangeQuery>> {
    if dims_query == 0 || dims_query > dims_total {
        return Err(Error::param(format!("cannot query {dims_query} of {dims_total} attributes")));
    }
    let lo_len = ((min_len * domain as f64).ceil() as usize).max(1);
    let hi_len = ((max_len * domain as f64).floor() as usize).clamp(lo_len, domain);
    (0..count)
        .map(|_| {
            let attrs = rand::seq::index::sample(rng, dims_total, dims_query);
            let ranges = attrs
                .iter()
                .map(|a| {
                    let center = rng.random_range(0..domain);
                    let len = rng.random_range(lo_len..=hi_len);
                    let lo = center.saturating_sub(len / 2);
                    let hi = (center + len - len / 2).min(domain);
                    (a, Interval::new(lo, hi))
                })
                .collect();
            RangeQuery::new(ranges, domain)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    #[test]
    fn zero_std_gives_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [DataKind::Gaussian, DataKind::Laplace] {
            let r = gen_synthetic(kind, 50, 2, 512.0, 0.0, 1024, &mut rng).unwrap();
            assert!(r.iter().flatten().all(|&v| v == 512));
        }
    }

    #[test]
    fn gaussian_sample_mean() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = gen_synthetic(DataKind::Gaussian, 100_000, 1, 512.0, 40.0, 1024, &mut rng).unwrap();
            let m = r.iter().map(|x| x[0] as f64).sum::<f64>() / r.len() as f64;
            assert!((m - 512.0).abs() < 1.0, "{m}");
        }
    }

    #[test]
    fn laplace_spread_matches_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = gen_synthetic(DataKind::Laplace, 100_000, 1, 512.0, 40.0, 1024, &mut rng).unwrap();
        let m = r.iter().map(|x| x[0] as f64).sum::<f64>() / r.len() as f64;
        let v = r.iter().map(|x| (x[0] as f64 - m).powi(2)).sum::<f64>() / r.len() as f64;
        assert!((v.sqrt() - 40.0).abs() < 1.0, "{}", v.sqrt());
    }

    #[test]
    fn outputs_are_clipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = gen_synthetic(DataKind::Laplace, 5000, 3, 10.0, 400.0, 64, &mut rng).unwrap();
        assert!(r.iter().flatten().all(|&v| v < 64));
        assert!(r.iter().flatten().any(|&v| v == 0) && r.iter().flatten().any(|&v| v == 63));
    }

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_rescale_and_drop() {
        let f = write_csv("a,b,c\n0,5,x\n100,5,y\n,5,z\n50,oops,w\n");
        let cols = vec!["a".to_string(), "b".to_string()];
        let (rows, dropped) = load_csv(f.path(), &cols, 64).unwrap();
        assert_eq!(dropped, 2);
        assert_eq!(rows, vec![vec![0, 0], vec![63, 0]]);
    }

    #[test]
    fn csv_errors() {
        let cols = vec!["a".to_string()];
        let e = load_csv(Path::new("/nonexistent/x.csv"), &cols, 8).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        let f = write_csv("a\nfoo\nbar\n");
        assert!(matches!(load_csv(f.path(), &cols, 8), Err(Error::Data { .. })));
        let f = write_csv("b\n1\n");
        assert!(matches!(load_csv(f.path(), &cols, 8), Err(Error::Data { .. })));
    }

    #[test]
    fn frequency_edges() {
        let recs = vec![vec![1, 2], vec![3, 4], vec![5, 6]];
        let full = RangeQuery::new(vec![(0, Interval::new(0, 8)), (1, Interval::new(0, 8))], 8).unwrap();
        assert_eq!(true_frequency(&recs, &full).unwrap(), 1.0);
        let none = RangeQuery::one_dim(6, 8, 8).unwrap();
        assert_eq!(true_frequency(&recs, &none).unwrap(), 0.0);
        assert!(true_frequency(&[], &none).is_err());
    }

    #[test]
    fn query_lengths_and_attrs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let qs = gen_queries(500, 1024, 5, 3, (0.125, 0.375), &mut rng).unwrap();
        for q in &qs {
            assert_eq!(q.dims(), 3);
            for (_, iv) in q.ranges() {
                assert!(iv.hi <= 1024 && iv.len() <= 384);
                if iv.lo > 0 && iv.hi < 1024 {
                    assert!(iv.len() >= 128);
                }
            }
        }
        assert!(gen_queries(1, 64, 2, 3, (0.125, 0.375), &mut rng).is_err());
    }
}
