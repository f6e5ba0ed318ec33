//! Convex combination of vision and IMU embeddings.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resampler::{Embedding, Latents};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinationWeights {
    pub w_vision: f64,
    pub w_imu: f64,
}

impl CombinationWeights {
    pub fn new(w_vision: f64, w_imu: f64) -> Result<Self> {
        let w = Self { w_vision, w_imu };
        w.validate()?;
        Ok(w)
    }

    /// Weights (w, 1 - w), with the complement rounded to 12 decimals so
    /// that reports show 0.2 rather than 0.19999999999999996.
    pub fn vision_share(w_vision: f64) -> Result<Self> {
        Self::new(w_vision, ((1.0 - w_vision) * 1e12).round() / 1e12)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_vision >= 0.0 && self.w_imu >= 0.0)
            || (self.w_vision + self.w_imu - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(format!(
                "combination weights must be >= 0 and sum to 1, got ({}, {})",
                self.w_vision, self.w_imu
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for CombinationWeights {
    type Err = Error;

    /// Parses "0.8,0.2".
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let parse = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad weight {p:?} in {s:?}")))
        };
        match parts.as_slice() {
            [v, i] => Self::new(parse(v)?, parse(i)?),
            _ => Err(Error::InvalidArgument(format!(
                "expected two weights, got {s:?}"
            ))),
        }
    }
}

fn mix(v: f32, i: f32, w: &CombinationWeights) -> f32 {
    (w.w_vision as f32) * v + (w.w_imu as f32) * i
}

/// w_vision * e_vis + w_imu * e_imu, optionally renormalized. A zero weight
/// returns the other input unchanged.
pub fn combine_embeddings(
    e_vis: &Embedding,
    e_imu: &Embedding,
    w: CombinationWeights,
    renormalize: bool,
) -> Result<Embedding> {
    w.validate()?;
    if e_vis.dim() != e_imu.dim() {
        return Err(Error::Shape(format!(
            "vision dim {} vs imu dim {}",
            e_vis.dim(),
            e_imu.dim()
        )));
    }
    if !(e_vis.normalized && e_imu.normalized) {
        return Err(Error::InvalidArgument(
            "combination expects normalized embeddings".into(),
        ));
    }
    if w.w_imu == 0.0 {
        return Ok(e_vis.clone());
    }
    if w.w_vision == 0.0 {
        return Ok(e_imu.clone());
    }
    let v = ndarray::Zip::from(&e_vis.vector)
        .and(&e_imu.vector)
        .map_collect(|&a, &b| mix(a, b, &w));
    if !renormalize {
        return Ok(Embedding::new(v, false));
    }
    let norm = v
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(Embedding::new(
        v.mapv(|x| (f64::from(x) / norm) as f32),
        true,
    ))
}

/// Row-wise combination of two embedding matrices.
pub fn combine_rows(
    vis: ArrayView2<'_, f32>,
    imu: ArrayView2<'_, f32>,
    w: CombinationWeights,
    renormalize: bool,
) -> Result<Array2<f32>> {
    if vis.dim() != imu.dim() {
        return Err(Error::Shape(format!(
            "vision {:?} vs imu {:?}",
            vis.dim(),
            imu.dim()
        )));
    }
    let mut out = Array2::zeros(vis.dim());
    for ((mut o, v), i) in out.rows_mut().into_iter().zip(vis.rows()).zip(imu.rows()) {
        let e = combine_embeddings(
            &Embedding::new(v.to_owned(), true),
            &Embedding::new(i.to_owned(), true),
            w,
            renormalize,
        )?;
        o.assign(&e.vector);
    }
    Ok(out)
}

/// Slot-wise combination of two latent sets.
pub fn combine_latents(vis: &Latents, imu: &Latents, w: CombinationWeights) -> Result<Latents> {
    w.validate()?;
    if vis.values.dim() != imu.values.dim() {
        return Err(Error::Shape(format!(
            "latents {:?} vs {:?}",
            vis.values.dim(),
            imu.values.dim()
        )));
    }
    let values = ndarray::Zip::from(&vis.values)
        .and(&imu.values)
        .map_collect(|&a, &b| mix(a, b, &w));
    Ok(Latents { values })
}

/// Mean over latent rows (no normalization).
pub fn mean_latent(l: &Latents) -> ndarray::Array1<f32> {
    l.values.mean_axis(Axis(0)).expect("latents are non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn closed_form_case() {
        let v = Embedding::new(array![1.0, 0.0], true);
        let i = Embedding::new(array![0.0, 1.0], true);
        let c =
            combine_embeddings(&v, &i, CombinationWeights::new(0.8, 0.2).unwrap(), true).unwrap();
        let (a, b) = (0.8 / 0.68f64.sqrt(), 0.2 / 0.68f64.sqrt());
        assert!((f64::from(c.vector[0]) - a).abs() < 1e-6);
        assert!((f64::from(c.vector[1]) - b).abs() < 1e-6);
    }

    #[test]
    fn antipodal_equal_weights_fail() {
        let v = Embedding::new(array![1.0, 0.0], true);
        let i = Embedding::new(array![-1.0, 0.0], true);
        assert!(
            combine_embeddings(&v, &i, CombinationWeights::new(0.5, 0.5).unwrap(), true).is_err()
        );
    }

    #[test]
    fn weights_parse_and_validate() {
        let w: CombinationWeights = "0.8,0.2".parse().unwrap();
        assert_eq!(w.w_vision, 0.8);
        assert!("0.8,0.3".parse::<CombinationWeights>().is_err());
        assert!("1.2,-0.2".parse::<CombinationWeights>().is_err());
    }
}
