use crate::{Error, Result};

/// Sinusoidal timestep embedding: interleaved `(sin(t·ω_k), cos(t·ω_k))` pairs
/// with `ω_k = 10000^(−2k/dim)`.
pub fn sinusoidal_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "time embedding dimension must be even and at least 2, got {dim}"
        )));
    }
    if t.is_nan() || t < 0.0 {
        return Err(Error::Config(format!(
            "timestep must be non-negative, got {t}"
        )));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        let arg = t * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_timestep() {
        assert_eq!(sinusoidal_embed(0.0, 4).unwrap(), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn unit_timestep_dim_two() {
        let e = sinusoidal_embed(1.0, 2).unwrap();
        assert!((e[0] - 0.84147).abs() < 1e-5);
        assert!((e[1] - 0.54030).abs() < 1e-5);
    }

    #[test]
    fn bounded_entries() {
        let e = sinusoidal_embed(25.0, 64).unwrap();
        assert_eq!(e.len(), 64);
        assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn odd_dimension_is_a_config_error() {
        assert!(matches!(sinusoidal_embed(3.0, 5), Err(Error::Config(_))));
        assert!(sinusoidal_embed(3.0, 0).is_err());
    }
}
