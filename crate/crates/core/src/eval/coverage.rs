use serde::{Deserialize, Serialize};

use crate::nn::Tensor2;
use crate::{Error, Result};

/// Whose neighbourhoods define coverage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageDirection {
    /// Fraction of real points whose k-NN ball (radius measured among real points)
    /// contains at least one fake point.
    #[default]
    RealNeighborhoods,
    /// Fraction of fake points whose k-NN ball among fake points contains a real point.
    FakeNeighborhoods,
}

impl std::str::FromStr for CoverageDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "real" | "real_neighborhoods" => Ok(Self::RealNeighborhoods),
            "fake" | "fake_neighborhoods" => Ok(Self::FakeNeighborhoods),
            other => Err(Error::Config(format!(
                "unknown coverage direction {other:?}"
            ))),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Coverage of `fake` against `real` in the given direction, Euclidean distance.
pub fn coverage_points(
    real: &Tensor2,
    fake: &Tensor2,
    k: usize,
    direction: CoverageDirection,
) -> Result<f64> {
    match direction {
        CoverageDirection::RealNeighborhoods => ball_coverage(real, fake, k),
        CoverageDirection::FakeNeighborhoods => ball_coverage(fake, real, k),
    }
}

/// Fraction of `anchors` whose distance to the k-th nearest other anchor bounds
/// the distance to some point of `probes`.
fn ball_coverage(anchors: &Tensor2, probes: &Tensor2, k: usize) -> Result<f64> {
    let n = anchors.rows();
    if k == 0 || k >= n {
        return Err(Error::Config(format!(
            "coverage needs 1 <= k < {n} reference rows, got k = {k}"
        )));
    }
    if probes.rows() == 0 {
        return Err(Error::Config(
            "coverage needs at least one comparison row".into(),
        ));
    }
    if anchors.cols() != probes.cols() {
        return Err(Error::shape("coverage", anchors.cols(), probes.cols()));
    }
    let mut buf = vec![0.0; n];
    let mut covered = 0usize;
    for i in 0..n {
        let a = anchors.row(i);
        for (j, d) in buf.iter_mut().enumerate() {
            *d = sq_dist(a, anchors.row(j));
        }
        // index k counts the anchor itself at distance 0
        let (_, &mut radius, _) = buf.select_nth_unstable_by(k, |x, y| x.total_cmp(y));
        if (0..probes.rows()).any(|j| sq_dist(a, probes.row(j)) <= radius) {
            covered += 1;
        }
    }
    Ok(covered as f64 / n as f64)
}

/// Agreement between `fake_labels` and the labels a 1-nearest-neighbour
/// classifier fit on `(real, real_labels)` assigns to the fake points.
pub fn nn1_agreement(
    real: &Tensor2,
    real_labels: &[usize],
    fake: &Tensor2,
    fake_labels: &[usize],
) -> Result<f64> {
    if real.rows() == 0 || real.rows() != real_labels.len() || fake.rows() != fake_labels.len() {
        return Err(Error::shape(
            "1-NN agreement",
            real.rows(),
            real_labels.len(),
        ));
    }
    if real.cols() != fake.cols() {
        return Err(Error::shape(
            "1-NN agreement features",
            real.cols(),
            fake.cols(),
        ));
    }
    let mut agree = 0usize;
    for (i, &label) in fake_labels.iter().enumerate() {
        let f = fake.row(i);
        let mut best = (f64::INFINITY, 0usize);
        for j in 0..real.rows() {
            let d = sq_dist(f, real.row(j));
            if d < best.0 {
                best = (d, j);
            }
        }
        if real_labels[best.1] == label {
            agree += 1;
        }
    }
    Ok(agree as f64 / fake.rows().max(1) as f64)
}
