use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::engine::Tensor;
use crate::rng::Rng;

/// `X ~ U[0, π]`, `Y = (sin(X + ε) + c1, cos(X + ε) + c1)`, `ε ~ N(c2, σ²)`.
///
/// Paired and test responses always use `c1 = c2 = 0`; the shifts only apply
/// to the unpaired responses. `c2` is in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircleModelConfig {
    pub n: usize,
    #[serde(rename = "N")]
    pub unpaired: usize,
    pub c1: f64,
    pub c2: f64,
    pub sigma: f64,
    pub test_size: usize,
}

impl Default for CircleModelConfig {
    fn default() -> Self {
        Self {
            n: 250,
            unpaired: 750,
            c1: 0.0,
            c2: 0.0,
            sigma: PI / 10.0,
            test_size: 500,
        }
    }
}

impl CircleModelConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n == 0 {
            return Err(DataError::InvalidConfig("n must be at least 1".into()));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(DataError::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !self.c1.is_finite() || !self.c2.is_finite() {
            return Err(DataError::InvalidConfig("shifts must be finite".into()));
        }
        Ok(())
    }
}

/// `x` is `n × 1` in `[0, π]`, `y` is `n × 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSet {
    pub x: Tensor,
    pub y: Tensor,
}

impl PairedSet {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> PairedSet {
        PairedSet {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnpairedSet {
    pub y: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircleData {
    pub paired: PairedSet,
    pub unpaired: UnpairedSet,
    pub test: PairedSet,
}

impl CircleData {
    /// Paired responses stacked on top of the unpaired ones.
    pub fn all_responses(&self) -> Tensor {
        self.paired.y.vcat(&self.unpaired.y).expect("both splits have two columns")
    }
}

fn draw(count: usize, c1: f64, c2: f64, sigma: f64, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(count);
    let mut ys = Vec::with_capacity(2 * count);
    for _ in 0..count {
        let x = rng.uniform_range(0.0, PI);
        let angle = x + c2 + sigma * rng.normal();
        xs.push(x);
        ys.push(angle.sin() + c1);
        ys.push(angle.cos() + c1);
    }
    (xs, ys)
}

/// Each split reads its own child stream, so the paired split does not
/// depend on `N`, `c1`, `c2` or the test size.
pub fn sample_circle_model(cfg: &CircleModelConfig, rng: &Rng) -> Result<CircleData, DataError> {
    cfg.validate()?;
    let (px, py) = draw(cfg.n, 0.0, 0.0, cfg.sigma, &mut rng.child("paired"));
    let (_, uy) = draw(cfg.unpaired, cfg.c1, cfg.c2, cfg.sigma, &mut rng.child("unpaired"));
    let (tx, ty) = draw(cfg.test_size, 0.0, 0.0, cfg.sigma, &mut rng.child("test"));
    let tensor = |rows, cols, v| Tensor::new(rows, cols, v).expect("sized above");
    Ok(CircleData {
        paired: PairedSet {
            x: tensor(cfg.n, 1, px),
            y: tensor(cfg.n, 2, py),
        },
        unpaired: UnpairedSet {
            y: tensor(cfg.unpaired, 2, uy),
        },
        test: PairedSet {
            x: tensor(cfg.test_size, 1, tx),
            y: tensor(cfg.test_size, 2, ty),
        },
    })
}

/// Draws from `Y | X = x` of the unshifted model (`count × 2`). `sigma = 0`
/// returns the noiseless point.
pub fn oracle_conditional_sample(x: f64, count: usize, sigma: f64, rng: &mut Rng) -> Tensor {
    let mut ys = Vec::with_capacity(2 * count);
    for _ in 0..count {
        let angle = x + sigma * rng.normal();
        ys.push(angle.sin());
        ys.push(angle.cos());
    }
    Tensor::new(count, 2, ys).expect("sized above")
}

/// `E[Y | X = x] = e^{−σ²/2}·(sin x, cos x)`.
pub fn conditional_mean(x: f64, sigma: f64) -> [f64; 2] {
    let k = (-sigma * sigma / 2.0).exp();
    [k * x.sin(), k * x.cos()]
}

/// Distance from `y` to the unit circle centred at `(c1, c1)`.
pub fn dist_to_circle_support(y: &[f64], c1: f64) -> f64 {
    ((y[0] - c1).hypot(y[1] - c1) - 1.0).abs()
}

#[derive(Serialize)]
struct CsvRow {
    split: &'static str,
    x: Option<f64>,
    y1: f64,
    y2: f64,
}

/// Writes every split as `split,x,y1,y2`; unpaired rows leave `x` empty.
pub fn write_csv(data: &CircleData, path: &Path) -> Result<(), DataError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut emit = |split, x: Option<&Tensor>, y: &Tensor| -> Result<(), DataError> {
        for i in 0..y.rows() {
            w.serialize(CsvRow {
                split,
                x: x.map(|x| x.get(i, 0)),
                y1: y.get(i, 0),
                y2: y.get(i, 1),
            })?;
        }
        Ok(())
    };
    emit("paired", Some(&data.paired.x), &data.paired.y)?;
    emit("unpaired", None, &data.unpaired.y)?;
    emit("test", Some(&data.test.x), &data.test.y)?;
    w.flush().map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifted(c1: f64, c2: f64) -> CircleModelConfig {
        CircleModelConfig {
            n: 200,
            unpaired: 300,
            c1,
            c2,
            test_size: 100,
            ..Default::default()
        }
    }

    #[test]
    fn responses_lie_on_their_circles() {
        let data = sample_circle_model(&shifted(0.5, 0.3 * PI), &Rng::new(1)).unwrap();
        for y in data.paired.y.row_iter().chain(data.test.y.row_iter()) {
            assert!(dist_to_circle_support(y, 0.0) < 1e-12);
        }
        for y in data.unpaired.y.row_iter() {
            assert!(dist_to_circle_support(y, 0.5) < 1e-12);
        }
        assert!(data.paired.x.data().iter().all(|&x| (0.0..=PI).contains(&x)));
    }

    #[test]
    fn splits_are_isolated() {
        let rng = Rng::new(3);
        let a = sample_circle_model(&shifted(0.0, 0.0), &rng).unwrap();
        let b = sample_circle_model(
            &CircleModelConfig {
                unpaired: 5,
                c1: 0.4,
                ..shifted(0.0, 0.0)
            },
            &rng,
        )
        .unwrap();
        assert_eq!(a.paired, b.paired);
        assert_eq!(a.test, b.test);
        assert_eq!(a, sample_circle_model(&shifted(0.0, 0.0), &rng).unwrap());
    }

    #[test]
    fn support_distance_examples() {
        assert_eq!(dist_to_circle_support(&[2.0, 0.0], 0.0), 1.0);
        assert_eq!(dist_to_circle_support(&[0.0, 0.0], 0.0), 1.0);
        assert_eq!(dist_to_circle_support(&[0.0, 1.0], 0.0), 0.0);
        assert_eq!(dist_to_circle_support(&[1.5, 0.5], 0.5), 0.0);
    }

    #[test]
    fn noiseless_oracle_is_the_mode() {
        let y = oracle_conditional_sample(0.7, 3, 0.0, &mut Rng::new(0));
        for row in y.row_iter() {
            assert_eq!(row, &[0.7f64.sin(), 0.7f64.cos()]);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(sample_circle_model(&CircleModelConfig { n: 0, ..Default::default() }, &Rng::new(0)).is_err());
        let bad = CircleModelConfig {
            sigma: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/data.csv");
        let data = sample_circle_model(&shifted(0.0, 0.0), &Rng::new(2)).unwrap();
        write_csv(&data, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("split,x,y1,y2"));
        assert_eq!(text.lines().count(), 1 + 200 + 300 + 100);
        assert!(text.lines().any(|l| l.starts_with("unpaired,,")));
    }
}
