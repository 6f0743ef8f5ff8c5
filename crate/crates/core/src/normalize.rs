//! Block-wise min-max scaling.
//!
//! One (min, max) pair covers all 17 trip columns and another all 17
//! direction columns, pooled over every region of every city, so hourly
//! profiles keep their shape and cities stay comparable.

use std::fmt::Write as _;

use thiserror::Error;

use crate::features::{FEATURE_DIM, HOURS};
use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum NormalizeError {
    #[error("cannot fit normalization on an empty matrix")]
    EmptyMatrix,
    #[error("expected {FEATURE_DIM} columns, got {0}")]
    ShapeMismatch(usize),
    #[error("bad normalization file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParams {
    pub trips_min: f64,
    pub trips_max: f64,
    pub dirs_min: f64,
    pub dirs_max: f64,
}

#[derive(Clone, Copy)]
enum Block {
    Trips,
    Dirs,
}

fn block_of(col: usize) -> Block {
    if col < HOURS {
        Block::Trips
    } else {
        Block::Dirs
    }
}

impl NormParams {
    fn range(&self, block: Block) -> (f64, f64) {
        match block {
            Block::Trips => (self.trips_min, self.trips_max),
            Block::Dirs => (self.dirs_min, self.dirs_max),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# gtfs2vec normalization v1\n");
        for (k, v) in [
            ("trips_min", self.trips_min),
            ("trips_max", self.trips_max),
            ("dirs_min", self.dirs_min),
            ("dirs_max", self.dirs_max),
        ] {
            let _ = writeln!(s, "{k}={v:?}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, NormalizeError> {
        let mut vals = [None; 4];
        const KEYS: [&str; 4] = ["trips_min", "trips_max", "dirs_min", "dirs_max"];
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NormalizeError::Parse(format!("expected key=value, got `{line}`")))?;
            let slot = KEYS
                .iter()
                .position(|key| *key == k.trim())
                .ok_or_else(|| NormalizeError::Parse(format!("unknown key `{}`", k.trim())))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| NormalizeError::Parse(format!("bad number for {}", KEYS[slot])))?;
            vals[slot] = Some(v);
        }
        let get = |i: usize| vals[i].ok_or_else(|| NormalizeError::Parse(format!("missing {}", KEYS[i])));
        let p = NormParams {
            trips_min: get(0)?,
            trips_max: get(1)?,
            dirs_min: get(2)?,
            dirs_max: get(3)?,
        };
        if p.trips_min > p.trips_max || p.dirs_min > p.dirs_max {
            return Err(NormalizeError::Parse("min greater than max".into()));
        }
        Ok(p)
    }
}

fn check_shape(m: &Matrix) -> Result<(), NormalizeError> {
    if m.cols() != FEATURE_DIM {
        return Err(NormalizeError::ShapeMismatch(m.cols()));
    }
    Ok(())
}

pub fn fit(matrix: &Matrix) -> Result<NormParams, NormalizeError> {
    check_shape(matrix)?;
    if matrix.is_empty() {
        return Err(NormalizeError::EmptyMatrix);
    }
    let mut p = NormParams {
        trips_min: f64::INFINITY,
        trips_max: f64::NEG_INFINITY,
        dirs_min: f64::INFINITY,
        dirs_max: f64::NEG_INFINITY,
    };
    for row in matrix.iter_rows() {
        for (c, &v) in row.iter().enumerate() {
            let (lo, hi) = match block_of(c) {
                Block::Trips => (&mut p.trips_min, &mut p.trips_max),
                Block::Dirs => (&mut p.dirs_min, &mut p.dirs_max),
            };
            *lo = lo.min(v);
            *hi = hi.max(v);
        }
    }
    Ok(p)
}

/// Scale into [0, 1]; values outside the fitted range are clamped and a
/// constant block maps to 0.
pub fn transform(matrix: &Matrix, params: &NormParams) -> Result<Matrix, NormalizeError> {
    check_shape(matrix)?;
    let mut out = matrix.clone();
    for r in 0..out.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            let (lo, hi) = params.range(block_of(c));
            *v = if hi > lo { ((*v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        }
    }
    Ok(out)
}

pub fn inverse_transform(matrix: &Matrix, params: &NormParams) -> Result<Matrix, NormalizeError> {
    check_shape(matrix)?;
    let mut out = matrix.clone();
    for r in 0..out.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            let (lo, hi) = params.range(block_of(c));
            *v = lo + *v * (hi - lo);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(trips: f64, dirs: f64) -> [f64; FEATURE_DIM] {
        let mut r = [0.0; FEATURE_DIM];
        r[..HOURS].fill(trips);
        r[HOURS..].fill(dirs);
        r
    }

    #[test]
    fn block_extrema() {
        let mut a = row(0.0, 0.0);
        a[5] = 120.0;
        a[HOURS + 2] = 14.0;
        let m = Matrix::from_rows(&[a, row(3.0, 1.0)], FEATURE_DIM).unwrap();
        let p = fit(&m).unwrap();
        assert_eq!((p.trips_min, p.trips_max, p.dirs_min, p.dirs_max), (0.0, 120.0, 0.0, 14.0));
    }

    #[test]
    fn endpoints_and_degenerate() {
        let m = Matrix::from_rows(&[row(10.0, 2.0), row(50.0, 2.0)], FEATURE_DIM).unwrap();
        let p = fit(&m).unwrap();
        let t = transform(&m, &p).unwrap();
        assert_eq!(t.get(0, 0), 0.0);
        assert_eq!(t.get(1, 0), 1.0);
        // dirs block is constant.
        assert!(t.row(1)[HOURS..].iter().all(|&v| v == 0.0));

        let single = Matrix::from_rows(&[row(7.0, 3.0)], FEATURE_DIM).unwrap();
        let p = fit(&single).unwrap();
        assert_eq!((p.trips_min, p.trips_max), (7.0, 7.0));
        assert!(transform(&single, &p).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clamps_unseen_values() {
        let p = NormParams { trips_min: 0.0, trips_max: 10.0, dirs_min: 0.0, dirs_max: 2.0 };
        let m = Matrix::from_rows(&[row(20.0, -1.0)], FEATURE_DIM).unwrap();
        let t = transform(&m, &p).unwrap();
        assert_eq!(t.get(0, 0), 1.0);
        assert_eq!(t.get(0, HOURS), 0.0);
    }

    #[test]
    fn inverse_endpoints() {
        let p = NormParams { trips_min: 4.0, trips_max: 120.0, dirs_min: 0.0, dirs_max: 9.0 };
        let m = Matrix::from_rows(&[row(1.0, 0.0)], FEATURE_DIM).unwrap();
        let inv = inverse_transform(&m, &p).unwrap();
        assert_eq!(inv.get(0, 0), 120.0);
        assert_eq!(inv.get(0, HOURS), 0.0);
        let m = Matrix::from_rows(&[row(0.0, 1.0)], FEATURE_DIM).unwrap();
        let inv = inverse_transform(&m, &p).unwrap();
        assert_eq!(inv.get(0, 0), 4.0);
        assert_eq!(inv.get(0, HOURS), 9.0);
    }

    #[test]
    fn errors() {
        assert_eq!(fit(&Matrix::zeros(0, FEATURE_DIM)), Err(NormalizeError::EmptyMatrix));
        assert_eq!(fit(&Matrix::zeros(2, 3)), Err(NormalizeError::ShapeMismatch(3)));
    }

    #[test]
    fn text_roundtrip() {
        let p = NormParams { trips_min: 0.0, trips_max: 123.5, dirs_min: 1.0, dirs_max: 1.0 / 3.0 + 14.0 };
        assert_eq!(NormParams::from_text(&p.to_text()).unwrap(), p);
        assert!(NormParams::from_text("trips_min=1\n").is_err());
        assert!(NormParams::from_text("trips_min=2\ntrips_max=1\ndirs_min=0\ndirs_max=1").is_err());
    }

    fn matrix_strategy() -> impl Strategy<Value = Matrix> {
        (1usize..12).prop_flat_map(|n| {
            proptest::collection::vec(0u32..500, n * FEATURE_DIM)
                .prop_map(move |v| Matrix::from_vec(n, FEATURE_DIM, v.into_iter().map(f64::from).collect()))
        })
    }

    proptest! {
        #[test]
        fn range_and_roundtrip(m in matrix_strategy()) {
            let p = fit(&m).unwrap();
            let t = transform(&m, &p).unwrap();
            prop_assert!(t.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            let back = inverse_transform(&t, &p).unwrap();
            for (c, (a, b)) in back.as_slice().iter().zip(m.as_slice()).enumerate() {
                let (lo, hi) = p.range(block_of(c % FEATURE_DIM));
                if hi > lo {
                    prop_assert!((a - b).abs() <= 1e-9 * (hi - lo));
                }
            }
        }

        #[test]
        fn order_preserved(m in matrix_strategy()) {
            let p = fit(&m).unwrap();
            let t = transform(&m, &p).unwrap();
            let n = m.as_slice().len();
            for i in 0..n {
                for j in 0..n {
                    let same_block = (i % FEATURE_DIM < HOURS) == (j % FEATURE_DIM < HOURS);
                    if same_block && m.as_slice()[i] < m.as_slice()[j] {
                        prop_assert!(t.as_slice()[i] < t.as_slice()[j]);
                    }
                }
            }
        }

        #[test]
        fn ratios_kept_when_min_is_zero(a in 1u32..200, b in 1u32..200) {
            let mut r = row(0.0, 0.0);
            r[0] = a as f64;
            r[1] = b as f64;
            r[2] = 250.0;
            let m = Matrix::from_rows(&[r], FEATURE_DIM).unwrap();
            let p = fit(&m).unwrap();
            prop_assert_eq!(p.trips_min, 0.0);
            let t = transform(&m, &p).unwrap();
            let ratio = t.get(0, 0) / t.get(0, 1);
            prop_assert!((ratio - a as f64 / b as f64).abs() < 1e-12);
        }
    }
}
